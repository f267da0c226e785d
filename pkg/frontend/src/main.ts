/** Browser entry point: wire the live session to the DOM and animate. */

import { lerpPositions, renderFrame, setBanner, Toaster, updatePositions } from "./render.js";
import { LiveSession, type WsCtor } from "./session.js";
import type { SnapshotView } from "./types.js";

const POLL_MS = 200;

function wsUrl(): string {
  const override = new URLSearchParams(window.location.search).get("server");
  const host = override ?? window.location.host;
  return `ws://${host}/ws`;
}

function start(): void {
  const root = document.querySelector<HTMLElement>("#app");
  const banner = document.querySelector<HTMLElement>("#banner");
  const toastHost = document.querySelector<HTMLElement>("#toasts");
  if (root === null || banner === null || toastHost === null) return;

  const toaster = new Toaster(toastHost);
  let prev: SnapshotView | null = null;
  let current: SnapshotView | null = null;
  let lastSnapAt = 0;

  const session = new LiveSession(
    wsUrl(),
    WebSocket as unknown as WsCtor,
    {
      onSnapshot(snap) {
        prev = current;
        current = snap;
        lastSnapAt = performance.now();
        renderFrame(root, snap, {
          onJoin: (node) => void session.issue("JOIN", node),
          onLeave: (node) => void session.issue("LEAVE", node),
        });
      },
      onStatus(live) {
        setBanner(banner, live);
      },
      onRejection(message) {
        toaster.push(message);
      },
    },
    POLL_MS,
  );
  setBanner(banner, false);
  session.connect();

  const animate = () => {
    if (current !== null) {
      const alpha = (performance.now() - lastSnapAt) / POLL_MS;
      updatePositions(root, current, lerpPositions(prev, current, alpha));
    }
    window.requestAnimationFrame(animate);
  };
  window.requestAnimationFrame(animate);
}

start();
