/** Labeler app: review low-confidence image-suggestion pairs and collect
 * side-by-side judgments.  Keyboard: 1 = clickable, 0 = not, s = skip.
 */

import { ApiClient } from "./api.js";
import { GsbTally, makeCard, type ComparisonCard } from "./gsb.js";
import { sparklineSvg } from "./sparkline.js";
import { QueueStore } from "./store.js";
import type { PendingItem } from "./types.js";

const DEFAULT_BASE = "http://127.0.0.1:8321";

const app = document.getElementById("app");
if (!app) throw new Error("missing #app container");

const baseUrl = localStorage.getItem("querysugg.apiBase") ?? DEFAULT_BASE;
const annotator = localStorage.getItem("querysugg.annotator") ?? "labeler-1";
const api = new ApiClient(baseUrl);
const store = new QueueStore(api, annotator);
const tally = new GsbTally();
let blindMode = false;
let gsbCards: ComparisonCard[] = [];
let gsbIndex = 0;

function el(html: string): HTMLElement {
  const template = document.createElement("template");
  template.innerHTML = html.trim();
  return template.content.firstElementChild as HTMLElement;
}

function toast(message: string): void {
  const node = el(`<div class="toast">${message}</div>`);
  document.body.appendChild(node);
  setTimeout(() => node.remove(), 2500);
}

function renderCard(item: PendingItem): HTMLElement {
  const stub = blindMode
    ? ""
    : `<span class="stub">model: ${item.stub_label} @ ${item.confidence.toFixed(2)}</span>`;
  const card = el(`
    <section class="card" data-pair="${item.pair_id}">
      <header>
        <span class="topic">topic ${item.topic_id}</span>
        ${sparklineSvg(item.features)}
        ${stub}
      </header>
      <p class="tokens">${item.presented_text}</p>
      <footer>
        <button data-label="1">clickable (1)</button>
        <button data-label="0">not clickable (0)</button>
      </footer>
    </section>
  `);
  card.querySelectorAll("button").forEach((button) => {
    button.addEventListener("click", () => {
      void submit(item.pair_id, Number(button.dataset.label) === 1 ? 1 : 0);
    });
  });
  return card;
}

async function submit(pairId: string, label: 0 | 1): Promise<void> {
  const result = await store.submitLabel(pairId, label);
  if (result.outcome === "rolled_back") {
    toast(`submit failed: ${result.error ?? "unknown error"} (card restored)`);
  }
}

function renderQueue(root: HTMLElement): void {
  root.innerHTML = "";
  root.appendChild(
    el(`<div class="badge">${store.remaining} pending · ${store.labeled} labeled</div>`),
  );
  if (store.fetchError) {
    const banner = el(
      `<div class="banner error">cannot reach the service: ${store.fetchError} <button>retry</button></div>`,
    );
    banner.querySelector("button")?.addEventListener("click", () => void store.refresh());
    root.appendChild(banner);
    return;
  }
  if (store.items.length === 0) {
    root.appendChild(el(`<div class="empty">queue is empty: all pairs labeled</div>`));
    return;
  }
  for (const item of store.items) {
    root.appendChild(renderCard(item));
  }
}

function renderGsb(root: HTMLElement): void {
  root.innerHTML = "";
  const score = tally.score;
  root.appendChild(
    el(
      `<div class="badge">judgments ${tally.total} · score ${
        score === null ? "n/a" : score.toFixed(2)
      } (g${tally.good}/s${tally.same}/b${tally.bad})</div>`,
    ),
  );
  const card = gsbCards[gsbIndex];
  if (!card) {
    root.appendChild(el(`<div class="empty">no more comparison cards</div>`));
    return;
  }
  const lists = (side: "left" | "right", items: string[]) =>
    `<div class="list ${side}"><h4>${side === "left" ? "List 1" : "List 2"}</h4><ol>${items
      .map((s) => `<li>${s}</li>`)
      .join("")}</ol></div>`;
  const node = el(`
    <section class="card gsb">
      <header><span class="topic">${card.imageLabel}</span></header>
      <div class="columns">${lists("left", card.left)}${lists("right", card.right)}</div>
      <footer>
        <button data-shown="left">left better</button>
        <button data-shown="same">same</button>
        <button data-shown="right">right better</button>
      </footer>
    </section>
  `);
  node.querySelectorAll("button").forEach((button) => {
    button.addEventListener("click", () => {
      tally.judge(card, button.dataset.shown as "left" | "same" | "right");
      gsbIndex += 1;
      render();
    });
  });
  root.appendChild(node);
}

async function loadGsbCards(): Promise<void> {
  // demo comparators: the serving policy's top picks vs the tail of a deeper
  // fetch for the same image, blinded per card
  const seen = new Set<string>();
  const cards: ComparisonCard[] = [];
  for (const item of store.items) {
    if (seen.has(item.image_id) || cards.length >= 10) continue;
    seen.add(item.image_id);
    try {
      const out = await api.suggest(item.image_id, 9);
      const texts = out.suggestions.map((s) => s.tokens.join(" "));
      cards.push(
        makeCard(item.image_id, `topic ${item.topic_id}`, texts.slice(0, 3), texts.slice(-3)),
      );
    } catch {
      break; // comparisons are optional; queue labeling still works
    }
  }
  gsbCards = cards;
  render();
}

const queueRoot = el(`<main class="queue"></main>`);
const gsbRoot = el(`<aside class="gsb-panel"></aside>`);
const controls = el(`
  <nav class="controls">
    <label><input type="checkbox" id="blind"> blind mode (hide model labels)</label>
    <span class="hint">keys: 1 clickable · 0 not · s skip</span>
  </nav>
`);
controls.querySelector("#blind")?.addEventListener("change", (event) => {
  blindMode = (event.target as HTMLInputElement).checked;
  render();
});
app.append(controls, queueRoot, gsbRoot);

function render(): void {
  renderQueue(queueRoot);
  renderGsb(gsbRoot);
}

document.addEventListener("keydown", (event) => {
  const first = store.items[0];
  if (!first) return;
  if (event.key === "1") void submit(first.pair_id, 1);
  else if (event.key === "0") void submit(first.pair_id, 0);
  else if (event.key === "s") {
    // skip: rotate the first card to the back
    store.items = [...store.items.slice(1), first];
    render();
  }
});

store.subscribe(render);
void store.refresh().then(loadGsbCards);
setInterval(() => void store.refresh(), 15_000);
