/**
 * Track panel client for the mrdaw session server.
 *
 * The panel is deliberately thin: it holds no session logic, cannot advance
 * cursors or infer loop lengths, and renders purely from the latest state
 * snapshot the server pushed. Every gesture — keyboard pedal stand-ins,
 * transport buttons, tile clicks — becomes a single JSON event stamped with
 * the user binding chosen at connect time; the server validates and answers
 * with new state (or an error for the debug strip).
 */

export interface TrackInfo {
  index: number;
  state: string;
  owner: number;
}

export interface StateMessage {
  type: "state";
  seq: number;
  transport: string;
  looplen: number;
  sample_rate: number;
  tracks: TrackInfo[];
  cursors: Record<string, number>;
}

export type PedalAction = "record" | "play" | "stop";

export type PanelEvent =
  | { type: "event"; user: number; event: PedalAction }
  | { type: "event"; user: number; event: "toggle"; track: number };

/** Same palette the server-side reports use, one hex per track state. */
export const STATE_COLORS: Record<string, string> = {
  empty: "#d9d9d9",
  selected: "#3a6fd8",
  recording: "#d94343",
  playing: "#3fae5a",
  muted: "#8c8c8c",
};

/** Rendered (and logged) when the server sends a state string we don't know. */
export const UNKNOWN_COLOR = "#e0b000";

export function colorFor(label: string): string {
  const color = STATE_COLORS[label];
  if (color === undefined) {
    console.warn(`unknown track state ${JSON.stringify(label)}`);
    return UNKNOWN_COLOR;
  }
  return color;
}

/**
 * What a tile displays. "selected" is not a server-side track state: it marks
 * the slot a user's cursor rests on while that slot is still empty (the slot
 * the next recording would land in).
 */
export function tileLabel(
  track: TrackInfo,
  cursors: Record<string, number>,
): string {
  if (track.state === "empty") {
    for (const user of Object.keys(cursors)) {
      if (cursors[user] === track.index) {
        return "selected";
      }
    }
  }
  return track.state;
}

const KEY_ACTIONS: Record<string, PedalAction> = {
  r: "record",
  p: "play",
  s: "stop",
};

/**
 * The slice of the WebSocket surface the panel uses. Browser sockets and the
 * `ws` package both fit it; tests substitute a scripted fake.
 */
export interface PanelSocket {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => PanelSocket;

const browserSocketFactory: SocketFactory = (url) =>
  new WebSocket(url) as unknown as PanelSocket;

const DEBUG_LINES = 6;

/** DOM face of the panel: tiles, transport row, banner and debug strip. */
export class PanelView {
  readonly user: number;
  private lastSeq = -1;
  private connected = false;
  private readonly deliver: (event: PanelEvent) => void;
  private readonly doc: Document;
  private readonly tiles: HTMLButtonElement[] = [];
  private readonly gridEl: HTMLElement;
  private readonly transportEl: HTMLElement;
  private readonly looplenEl: HTMLElement;
  private readonly bannerEl: HTMLElement;
  private readonly debugEl: HTMLElement;

  constructor(
    root: HTMLElement,
    user: number,
    deliver: (event: PanelEvent) => void,
  ) {
    this.user = user;
    this.deliver = deliver;
    this.doc = root.ownerDocument;
    root.innerHTML = "";

    const header = this.el("header", "toolbar");
    const title = this.el("span", "title");
    title.textContent = `mrdaw · user ${user}`;
    this.transportEl = this.el("span", "transport");
    this.transportEl.textContent = "stopped";
    this.looplenEl = this.el("span", "looplen");
    this.looplenEl.textContent = "loop —";
    header.append(title, this.transportEl, this.looplenEl);
    for (const action of ["record", "play", "stop"] as PedalAction[]) {
      const button = this.el("button", "pedal") as HTMLButtonElement;
      button.dataset.action = action;
      button.textContent = action;
      button.title = `key ${action[0].toUpperCase()}`;
      button.addEventListener("click", () => this.sendPedal(action));
      header.append(button);
    }

    this.bannerEl = this.el("div", "banner");
    this.bannerEl.hidden = true;
    this.gridEl = this.el("div", "grid");
    this.debugEl = this.el("pre", "debug");
    root.append(header, this.bannerEl, this.gridEl, this.debugEl);
  }

  private el(tag: string, cls: string): HTMLElement {
    const node = this.doc.createElement(tag);
    node.className = cls;
    return node;
  }

  get seq(): number {
    return this.lastSeq;
  }

  get isConnected(): boolean {
    return this.connected;
  }

  /** Render a snapshot; stale sequence numbers are ignored. */
  applySnapshot(msg: StateMessage): boolean {
    if (msg.seq <= this.lastSeq) {
      return false;
    }
    this.lastSeq = msg.seq;
    while (this.tiles.length < msg.tracks.length) {
      const index = this.tiles.length;
      const tile = this.el("button", "tile") as HTMLButtonElement;
      tile.addEventListener("click", () => this.sendToggle(index));
      this.tiles.push(tile);
      this.gridEl.append(tile);
    }
    while (this.tiles.length > msg.tracks.length) {
      const tile = this.tiles.pop();
      tile?.remove();
    }
    msg.tracks.forEach((track, i) => {
      const label = tileLabel(track, msg.cursors);
      const tile = this.tiles[i];
      tile.dataset.state = label;
      tile.style.backgroundColor = colorFor(label);
      tile.textContent = String(track.index);
      tile.title = `track ${track.index} (user ${track.owner}): ${label}`;
    });
    this.transportEl.textContent = msg.transport;
    this.transportEl.dataset.transport = msg.transport;
    this.looplenEl.textContent =
      msg.looplen > 0
        ? `loop ${(msg.looplen / msg.sample_rate).toFixed(2)} s`
        : "loop —";
    return true;
  }

  /** A line for the debug strip (server errors, dropped-event warnings). */
  note(text: string): void {
    const line = this.doc.createElement("div");
    line.textContent = text;
    this.debugEl.append(line);
    while (this.debugEl.childElementCount > DEBUG_LINES) {
      this.debugEl.firstElementChild?.remove();
    }
  }

  showBanner(text: string): void {
    this.bannerEl.textContent = text;
    this.bannerEl.hidden = false;
  }

  setConnected(connected: boolean): void {
    this.connected = connected;
    if (connected) {
      this.bannerEl.hidden = true;
    } else {
      this.showBanner("disconnected — retrying");
    }
  }

  sendPedal(action: PedalAction): void {
    this.send({ type: "event", user: this.user, event: action });
  }

  sendToggle(track: number): void {
    this.send({ type: "event", user: this.user, event: "toggle", track });
  }

  pressKey(key: string): void {
    const action = KEY_ACTIONS[key.toLowerCase()];
    if (action !== undefined) {
      this.sendPedal(action);
    }
  }

  private send(event: PanelEvent): void {
    if (!this.connected) {
      this.note(`dropped ${event.event}: not connected`);
      return;
    }
    this.deliver(event);
  }
}

function asState(msg: Record<string, unknown>): StateMessage | null {
  if (
    typeof msg.seq !== "number" ||
    typeof msg.transport !== "string" ||
    typeof msg.looplen !== "number" ||
    typeof msg.sample_rate !== "number" ||
    !Array.isArray(msg.tracks) ||
    typeof msg.cursors !== "object" ||
    msg.cursors === null
  ) {
    return null;
  }
  for (const track of msg.tracks) {
    if (
      typeof track !== "object" ||
      track === null ||
      typeof track.index !== "number" ||
      typeof track.state !== "string"
    ) {
      return null;
    }
  }
  return msg as unknown as StateMessage;
}

export interface PanelOptions {
  user: number;
  url: string;
  factory?: SocketFactory;
  reconnectMs?: number;
}

export interface PanelHandle {
  view: PanelView;
  close(): void;
}

/**
 * Wire a view to a server: say hello on connect, render every snapshot,
 * surface errors, and keep retrying after a dropped connection.
 */
export function createPanel(
  root: HTMLElement,
  options: PanelOptions,
): PanelHandle {
  const { user, url, factory = browserSocketFactory } = options;
  const reconnectMs = options.reconnectMs ?? 1000;
  let socket: PanelSocket | null = null;
  let timer: ReturnType<typeof setTimeout> | null = null;
  let closed = false;

  const view = new PanelView(root, user, (event) => {
    socket?.send(JSON.stringify(event));
  });

  const dispatch = (raw: unknown): void => {
    const text = typeof raw === "string" ? raw : String(raw);
    let msg: unknown;
    try {
      msg = JSON.parse(text);
    } catch {
      view.showBanner("unreadable message from server");
      return;
    }
    if (typeof msg !== "object" || msg === null) {
      view.showBanner("unreadable message from server");
      return;
    }
    const record = msg as Record<string, unknown>;
    if (record.type === "state") {
      const state = asState(record);
      if (state === null) {
        view.showBanner("unreadable message from server");
      } else {
        view.applySnapshot(state);
      }
    } else if (record.type === "error") {
      view.note(String(record.message ?? "server error"));
    } else {
      view.note(`unexpected message type ${JSON.stringify(record.type)}`);
    }
  };

  const connect = (): void => {
    const ws = factory(url);
    socket = ws;
    ws.onopen = () => {
      ws.send(JSON.stringify({ type: "hello", user }));
      view.setConnected(true);
    };
    ws.onmessage = (ev) => dispatch(ev.data);
    ws.onclose = () => {
      if (socket === ws) {
        socket = null;
      }
      view.setConnected(false);
      if (!closed && timer === null) {
        timer = setTimeout(() => {
          timer = null;
          connect();
        }, reconnectMs);
      }
    };
    ws.onerror = () => {
      // the close handler owns recovery
    };
  };

  const onKey = (ev: Event): void => view.pressKey((ev as KeyboardEvent).key);
  const doc = root.ownerDocument;
  doc.addEventListener("keydown", onKey);
  connect();

  return {
    view,
    close: () => {
      closed = true;
      if (timer !== null) {
        clearTimeout(timer);
        timer = null;
      }
      doc.removeEventListener("keydown", onKey);
      socket?.close();
      socket = null;
    },
  };
}
