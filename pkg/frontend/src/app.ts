import {
  ApiError,
  NetworkError,
  TranslationClient,
  type Formality,
  type TranslateRequest,
} from "./api.js";
import { SessionHistory } from "./history.js";
import { highlightTranslation } from "./render.js";

const FORMALITIES: Formality[] = ["formal", "informal", "neutral"];

const PAGE_HTML = `
  <h1>Formality translation console</h1>
  <section class="compose">
    <label for="source-text">English text</label>
    <textarea id="source-text" rows="3" placeholder="you drink tea"></textarea>
    <fieldset id="formality-toggle">
      <legend>Formality</legend>
      ${FORMALITIES.map(
        (value, index) => `
      <label>
        <input type="radio" name="formality" value="${value}" ${index === 0 ? "checked" : ""}>
        ${value}
      </label>`
      ).join("")}
    </fieldset>
    <button id="submit" type="button" disabled>Translate</button>
  </section>
  <div id="error" class="error" hidden>
    <span id="error-message"></span>
    <button id="retry" type="button" hidden>Retry</button>
  </div>
  <section class="result" id="result" hidden>
    <h2>Translation</h2>
    <p id="translation"></p>
    <p id="result-meta" class="meta"></p>
  </section>
  <section class="history">
    <h2>History</h2>
    <ol id="history-list" reversed></ol>
  </section>
`;

export interface AppHandles {
  submit(): Promise<void>;
  readonly history: SessionHistory;
  readonly pending: boolean;
  selectedFormality(): Formality;
}

export function mountApp(root: HTMLElement, client: TranslationClient): AppHandles {
  root.innerHTML = PAGE_HTML;
  const textarea = root.querySelector<HTMLTextAreaElement>("#source-text")!;
  const submitButton = root.querySelector<HTMLButtonElement>("#submit")!;
  const errorBox = root.querySelector<HTMLElement>("#error")!;
  const errorMessage = root.querySelector<HTMLElement>("#error-message")!;
  const retryButton = root.querySelector<HTMLButtonElement>("#retry")!;
  const resultBox = root.querySelector<HTMLElement>("#result")!;
  const translationOut = root.querySelector<HTMLElement>("#translation")!;
  const resultMeta = root.querySelector<HTMLElement>("#result-meta")!;
  const historyList = root.querySelector<HTMLOListElement>("#history-list")!;

  const history = new SessionHistory();
  let pending = false;
  let lastRequest: TranslateRequest | null = null;

  function selectedFormality(): Formality {
    const checked = root.querySelector<HTMLInputElement>(
      'input[name="formality"]:checked'
    );
    return (checked?.value as Formality) ?? "formal";
  }

  function refreshControls(): void {
    submitButton.disabled = pending || textarea.value.trim() === "";
  }

  function showError(message: string, retryable: boolean): void {
    errorBox.hidden = false;
    errorMessage.textContent = message;
    retryButton.hidden = !retryable;
  }

  function clearError(): void {
    errorBox.hidden = true;
    errorMessage.textContent = "";
    retryButton.hidden = true;
  }

  function renderHistory(): void {
    historyList.innerHTML = "";
    for (const entry of history.entries()) {
      const item = document.createElement("li");
      const when = new Date(entry.timestamp).toLocaleTimeString();
      item.innerHTML =
        `<span class="meta">[${when}] ${entry.request.formality}</span> ` +
        `<span class="req">${escapeText(entry.request.text)}</span> &rarr; ` +
        `<span class="resp">${highlightTranslation(
          entry.response.translation,
          entry.response.spans
        )}</span>`;
      historyList.appendChild(item);
    }
  }

  async function send(request: TranslateRequest): Promise<void> {
    if (pending) return;
    pending = true;
    lastRequest = request;
    clearError();
    refreshControls();
    try {
      const response = await client.translate(request);
      resultBox.hidden = false;
      translationOut.innerHTML = highlightTranslation(response.translation, response.spans);
      resultMeta.textContent =
        `requested ${request.formality}, applied ${response.applied_formality}, ` +
        `model ${response.model_id}`;
      history.append({
        request: { text: request.text, formality: request.formality },
        response: { translation: response.translation, spans: response.spans },
        timestamp: Date.now(),
      });
      renderHistory();
    } catch (err) {
      if (err instanceof ApiError && err.status === 400) {
        showError(`Request rejected (400): ${err.message}`, false);
      } else if (err instanceof ApiError && err.status === 503) {
        showError("Service unavailable (503): the model is not loaded yet.", false);
      } else if (err instanceof ApiError) {
        showError(`Service error (${err.status}): ${err.message}`, false);
      } else if (err instanceof NetworkError) {
        showError("Network failure: could not reach the service.", true);
      } else {
        throw err;
      }
    } finally {
      pending = false;
      refreshControls();
    }
  }

  async function submit(): Promise<void> {
    const text = textarea.value.trim();
    if (!text || pending) return;
    // the payload reads the toggle at submit time, never a cached value
    await send({ text, formality: selectedFormality() });
  }

  textarea.addEventListener("input", refreshControls);
  submitButton.addEventListener("click", () => void submit());
  textarea.addEventListener("keydown", (event) => {
    if (event.key === "Enter" && (event.ctrlKey || event.metaKey)) {
      void submit();
    }
  });
  retryButton.addEventListener("click", () => {
    if (lastRequest) void send(lastRequest);
  });

  refreshControls();
  return {
    submit,
    history,
    get pending() {
      return pending;
    },
    selectedFormality,
  };
}

function escapeText(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}
