// @vitest-environment jsdom
import { afterAll, afterEach, beforeAll, beforeEach, describe, expect, it } from "vitest";

import { NetworkError, TranslationClient, type TranslateResponse } from "../src/api.js";
import { mountApp, type AppHandles } from "../src/app.js";
import { startFixtureService, type FixtureService } from "./fixture_service.js";

let service: FixtureService;

beforeAll(async () => {
  service = await startFixtureService();
});

afterAll(async () => {
  await service.close();
});

function mount(client?: TranslationClient): { root: HTMLElement; app: AppHandles } {
  const root = document.createElement("div");
  document.body.appendChild(root);
  const app = mountApp(root, client ?? new TranslationClient(service.baseUrl));
  return { root, app };
}

function textarea(root: HTMLElement): HTMLTextAreaElement {
  return root.querySelector("#source-text")!;
}

function submitButton(root: HTMLElement): HTMLButtonElement {
  return root.querySelector("#submit")!;
}

function setText(root: HTMLElement, value: string): void {
  const area = textarea(root);
  area.value = value;
  area.dispatchEvent(new Event("input"));
}

function pickFormality(root: HTMLElement, value: string): void {
  const radio = root.querySelector<HTMLInputElement>(
    `input[name="formality"][value="${value}"]`
  )!;
  radio.checked = true;
  radio.dispatchEvent(new Event("change"));
}

afterEach(() => {
  document.body.innerHTML = "";
});

describe("console flow against the fixture service", () => {
  it("defaults to formal on load", () => {
    const { root, app } = mount();
    expect(app.selectedFormality()).toBe("formal");
    const checked = root.querySelector<HTMLInputElement>(
      'input[name="formality"]:checked'
    );
    expect(checked?.value).toBe("formal");
  });

  it("disables submit for empty input and enables it once text arrives", () => {
    const { root } = mount();
    expect(submitButton(root).disabled).toBe(true);
    setText(root, "you drink tea");
    expect(submitButton(root).disabled).toBe(false);
    setText(root, "    ");
    expect(submitButton(root).disabled).toBe(true);
  });

  it("submitting under formal then informal yields two differing history entries", async () => {
    const { root, app } = mount();
    setText(root, "you drink tea");
    await app.submit();
    pickFormality(root, "informal");
    await app.submit();
    expect(app.history.size).toBe(2);
    const [newest, oldest] = app.history.entries();
    expect(oldest.request.formality).toBe("formal");
    expect(newest.request.formality).toBe("informal");
    expect(newest.response.translation).not.toBe(oldest.response.translation);
    const items = root.querySelectorAll("#history-list li");
    expect(items.length).toBe(2);
  });

  it("highlights spans with register-specific classes", async () => {
    const { root, app } = mount();
    setText(root, "you drink tea");
    await app.submit();
    expect(root.querySelectorAll("#translation mark.span-formal").length).toBeGreaterThan(0);
    pickFormality(root, "informal");
    await app.submit();
    expect(root.querySelectorAll("#translation mark.span-informal").length).toBeGreaterThan(0);
  });

  it("payload carries the toggle state at submit time", async () => {
    const seen: string[] = [];
    const spy = new TranslationClient(service.baseUrl, async (url, init) => {
      if (init?.body) seen.push(JSON.parse(String(init.body)).formality);
      return fetch(url, init);
    });
    const { root, app } = mount(spy);
    setText(root, "you go home");
    pickFormality(root, "neutral");
    await app.submit();
    pickFormality(root, "informal");
    await app.submit();
    expect(seen).toEqual(["neutral", "informal"]);
  });

  it("keyboard reaches the formality toggle", () => {
    const { root } = mount();
    const radios = root.querySelectorAll<HTMLInputElement>('input[name="formality"]');
    expect(radios.length).toBe(3);
    for (const radio of radios) {
      expect(radio.tabIndex).toBeGreaterThanOrEqual(0);
      radio.focus();
      expect(document.activeElement).toBe(radio);
    }
  });

  it("blocks a second in-flight submit", async () => {
    let resolveFetch: (r: Response) => void = () => {};
    const gate = new Promise<Response>((resolve) => (resolveFetch = resolve));
    const slow = new TranslationClient(service.baseUrl, () => gate);
    const { root, app } = mount(slow);
    setText(root, "you drink tea");
    const first = app.submit();
    expect(app.pending).toBe(true);
    expect(submitButton(root).disabled).toBe(true);
    const second = app.submit(); // no-op while pending
    resolveFetch(
      new Response(
        JSON.stringify({
          translation: "aap piiiye chai",
          applied_formality: "formal",
          spans: [],
          model_id: "fixture01",
        } satisfies TranslateResponse),
        { status: 200, headers: { "Content-Type": "application/json" } }
      )
    );
    await Promise.all([first, second]);
    expect(app.history.size).toBe(1);
    expect(app.pending).toBe(false);
  });
});

describe("error states", () => {
  it("renders a 400 message distinct from 503", async () => {
    const { root, app } = mount();
    setText(root, "!!!");
    // the fixture service, like the real one, rejects text that is empty
    // after normalization
    const spy = new TranslationClient(service.baseUrl, async () =>
      new Response(JSON.stringify({ detail: "text is empty after normalization" }), {
        status: 400,
      })
    );
    const withSpy = mount(spy);
    setText(withSpy.root, "anything");
    await withSpy.app.submit();
    const message400 = withSpy.root.querySelector("#error-message")!.textContent;
    expect(message400).toContain("400");

    const unavailable = await startFixtureService(false);
    const down = mount(new TranslationClient(unavailable.baseUrl));
    setText(down.root, "you drink tea");
    await down.app.submit();
    const message503 = down.root.querySelector("#error-message")!.textContent;
    expect(message503).toContain("503");
    expect(message503).not.toBe(message400);
    expect(down.app.history.size).toBe(0); // history unchanged on failure
    await unavailable.close();
    void root;
    void app;
  });

  it("offers retry only on network failure, and retry works", async () => {
    let failures = 0;
    const flaky = new TranslationClient(service.baseUrl, async (url, init) => {
      if (failures === 0) {
        failures += 1;
        throw new TypeError("fetch failed");
      }
      return fetch(url, init);
    });
    const { root, app } = mount(flaky);
    setText(root, "you read book");
    await app.submit();
    const retry = root.querySelector<HTMLButtonElement>("#retry")!;
    expect(root.querySelector<HTMLElement>("#error")!.hidden).toBe(false);
    expect(retry.hidden).toBe(false);
    retry.click();
    await new Promise((resolve) => setTimeout(resolve, 50));
    expect(app.history.size).toBe(1);
    expect(root.querySelector<HTMLElement>("#error")!.hidden).toBe(true);
  });

  it("does not surface retry for a 400 rejection", async () => {
    const rejecting = new TranslationClient(service.baseUrl, async () =>
      new Response(JSON.stringify({ detail: "bad" }), { status: 400 })
    );
    const { root, app } = mount(rejecting);
    setText(root, "text");
    await app.submit();
    expect(root.querySelector<HTMLButtonElement>("#retry")!.hidden).toBe(true);
  });

  it("NetworkError formats its cause", () => {
    const err = new NetworkError(new TypeError("fetch failed"));
    expect(err.message).toContain("fetch failed");
  });
});
