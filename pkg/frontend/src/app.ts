/** Entry point: episode picker + dashboard lifecycle against the service. */

import { ApiClient } from "./api.js";
import { SessionStore } from "./state.js";
import { SseClient } from "./sse.js";
import type { VerdictEvent } from "./types.js";
import { buildDashboard } from "./ui.js";

const MODEL_POLL_MS = 2000;

export async function startApp(
  doc: Document,
  mount: HTMLElement,
  baseUrl = "",
): Promise<void> {
  const api = new ApiClient(baseUrl);
  const picker = doc.createElement("div");
  picker.className = "episode-picker";
  const title = doc.createElement("h2");
  title.textContent = "Start a replay session";
  picker.append(title);
  mount.append(picker);

  const { episodes } = await api.episodes();
  for (const ep of episodes) {
    const btn = doc.createElement("button");
    btn.className = "episode-choice";
    btn.textContent = `${ep.episode_id} (${ep.skill}, ${ep.fault_kind}, ${ep.n} frames)`;
    btn.addEventListener("click", () => {
      void openSession(doc, mount, api, ep.skill, ep.episode_id);
      picker.remove();
    });
    picker.append(btn);
  }
}

async function openSession(
  doc: Document,
  mount: HTMLElement,
  api: ApiClient,
  skill: string,
  episodeId: string,
): Promise<void> {
  const info = await api.createReplaySession(skill, episodeId);
  const store = new SessionStore(info.session_id);
  const dash = buildDashboard(doc, store, api, {
    episodeId,
    onRetrain: (scope) => {
      void api.retrain(scope).then(refreshModels, refreshModels);
    },
  });
  mount.append(dash.root);

  async function refreshModels(): Promise<void> {
    dash.renderModels(await api.models());
  }
  void refreshModels();
  const poll = setInterval(() => void refreshModels(), MODEL_POLL_MS);

  doc.addEventListener("keydown", (ev) => dash.handleKey(ev.key));

  const sse = new SseClient<VerdictEvent>(
    api.streamUrl(info.session_id),
    (event) => {
      store.apply(event);
      if (event.final) {
        sse.close();
        clearInterval(poll);
      }
    },
    {
      onGap: () => store.markGap(),
      onStatus: (up) => store.setConnected(up),
    },
  );
  sse.connect();
}
