// Session socket wrapper: send typed messages, dispatch server messages,
// expose connection state for the reconnect button.

import { ClientMessage, ServerMessage, decode, encode } from "./protocol.js";

export type SocketState = "connecting" | "open" | "closed";

export class SessionSocket {
  private ws: WebSocket | null = null;
  state: SocketState = "closed";

  constructor(
    private readonly url: string,
    private readonly onMessage: (msg: ServerMessage) => void,
    private readonly onState: (s: SocketState) => void,
  ) {}

  connect(): void {
    if (this.state !== "closed") return;
    this.setState("connecting");
    this.ws = new WebSocket(this.url);
    this.ws.onopen = () => this.setState("open");
    this.ws.onclose = () => this.setState("closed");
    this.ws.onerror = () => this.setState("closed");
    this.ws.onmessage = (ev) => {
      const msg = decode(String(ev.data));
      if (msg === null) {
        console.warn("malformed server message dropped");
        return;
      }
      this.onMessage(msg);
    };
  }

  send(msg: ClientMessage): boolean {
    if (this.state !== "open" || !this.ws) return false;
    this.ws.send(encode(msg));
    return true;
  }

  private setState(s: SocketState) {
    this.state = s;
    this.onState(s);
  }
}
