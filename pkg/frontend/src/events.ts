// Server-push subscription over the /api/events SSE endpoint, implemented
// on fetch streams so it also runs under node; falls back to 500 ms polling
// of /api/scene when the stream cannot be opened.

export interface RevisionEvent {
  revision: number;
  status: string;
}

export interface Subscription {
  close(): void;
}

export function subscribeEvents(
  base: string,
  onEvent: (e: RevisionEvent) => void,
  onMode: (mode: "live" | "polling" | "stale") => void,
  pollMs = 500,
): Subscription {
  let closed = false;
  let pollTimer: ReturnType<typeof setInterval> | null = null;
  let lastRevision = -1;

  const startPolling = () => {
    if (closed || pollTimer) return;
    onMode("polling");
    pollTimer = setInterval(async () => {
      try {
        const r = await fetch(`${base}/api/scene`);
        if (!r.ok) throw new Error(String(r.status));
        const scene = await r.json();
        if (scene.revision !== lastRevision) {
          lastRevision = scene.revision;
          onEvent({ revision: scene.revision, status: scene.collision.status });
        }
      } catch {
        onMode("stale");
      }
    }, pollMs);
  };

  (async () => {
    try {
      const r = await fetch(`${base}/api/events`);
      if (!r.ok || !r.body) throw new Error("no event stream");
      onMode("live");
      const reader = r.body.getReader();
      const decoder = new TextDecoder();
      let buf = "";
      while (!closed) {
        const { done, value } = await reader.read();
        if (done) break;
        buf += decoder.decode(value, { stream: true });
        let nl;
        while ((nl = buf.indexOf("\n\n")) >= 0) {
          const chunk = buf.slice(0, nl);
          buf = buf.slice(nl + 2);
          for (const line of chunk.split("\n")) {
            if (line.startsWith("data: ")) {
              const event = JSON.parse(line.slice(6)) as RevisionEvent;
              lastRevision = event.revision;
              onEvent(event);
            }
          }
        }
      }
      if (!closed) startPolling();
    } catch {
      startPolling();
    }
  })();

  return {
    close() {
      closed = true;
      if (pollTimer) clearInterval(pollTimer);
    },
  };
}
