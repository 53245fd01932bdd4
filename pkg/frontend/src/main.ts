import { ApiClient } from "./api";
import { buildControls } from "./controls";
import { subscribeEvents } from "./events";
import { SceneStore } from "./state";
import { buildSweepPanel } from "./sweep";
import { RoomView } from "./viewer";

async function boot(): Promise<void> {
  const api = new ApiClient("");
  const store = new SceneStore(api);
  const view = new RoomView(api);

  const banner = document.getElementById("banner")!;
  const clearance = document.getElementById("clearance")!;
  const footer = document.getElementById("footer")!;

  store.subscribe((state) => {
    banner.textContent = state.banner ?? "";
    banner.classList.toggle("visible", state.banner !== null);
    clearance.textContent = state.clearanceMm === null
      ? ""
      : state.clearanceMm === 0
        ? "clearance: 0 mm (contact)"
        : `clearance: ${state.clearanceMm.toFixed(1)} mm`;
    footer.textContent = `revision ${state.revision} | ${state.connection}` +
      (state.busy ? " | applying..." : "");
    view.applyTransforms(state.components);
    view.setColliding(state.collidingNames);
    view.setSelected(state.selected);
  });

  buildControls(document.getElementById("joints")!, store);
  buildSweepPanel(document.getElementById("sweep")!, store);

  await store.load();
  await view.loadComponents(store.state.components);
  view.applyTransforms(store.state.components);
  view.setColliding(store.state.collidingNames);
  await view.attach(document.getElementById("view")!);
  store.select(null);   // re-emit so every panel renders the loaded state

  subscribeEvents(
    "",
    (event) => void store.onServerEvent(event),
    (mode) => store.setConnection(mode),
  );
}

boot().catch((e) => {
  const banner = document.getElementById("banner");
  if (banner) {
    banner.textContent = `failed to reach the scene service: ${e}`;
    banner.classList.add("visible");
  }
});
