/** Service base URL resolution: runtime global, then a meta tag baked in
 * at deploy time, then the local development default. */

const DEFAULT_SERVICE_URL = "http://127.0.0.1:8000";

export function resolveServiceUrl(doc: Document = document): string {
  const fromGlobal = (globalThis as Record<string, unknown>)["FMT_MT_SERVICE_URL"];
  if (typeof fromGlobal === "string" && fromGlobal) {
    return stripSlash(fromGlobal);
  }
  const meta = doc.querySelector('meta[name="fmtmt-service-url"]');
  const fromMeta = meta?.getAttribute("content");
  if (fromMeta) {
    return stripSlash(fromMeta);
  }
  return DEFAULT_SERVICE_URL;
}

function stripSlash(url: string): string {
  return url.endsWith("/") ? url.slice(0, -1) : url;
}
