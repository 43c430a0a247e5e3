import { TranslationClient } from "./api.js";
import { mountApp } from "./app.js";
import { resolveServiceUrl } from "./config.js";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}
mountApp(root, new TranslationClient(resolveServiceUrl()));
