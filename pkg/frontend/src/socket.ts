/** Websocket wrapper with automatic reconnect and a single text callback. */

import { ClientMsg } from "./protocol.js";

export interface SocketCallbacks {
  onText: (text: string) => void;
  onOpen: () => void;
  onClose: () => void;
}

export class GuidanceSocket {
  private ws: WebSocket | null = null;
  private closed = false;
  private retryMs = 500;

  constructor(
    private url: string,
    private cb: SocketCallbacks,
  ) {
    this.connect();
  }

  private connect(): void {
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.retryMs = 500;
      this.cb.onOpen();
    };
    ws.onmessage = (ev) => this.cb.onText(String(ev.data));
    ws.onclose = () => {
      this.cb.onClose();
      if (!this.closed) {
        setTimeout(() => this.connect(), this.retryMs);
        this.retryMs = Math.min(this.retryMs * 2, 8000);
      }
    };
    ws.onerror = () => ws.close();
  }

  send(msg: ClientMsg): boolean {
    if (!this.ws || this.ws.readyState !== WebSocket.OPEN) return false;
    this.ws.send(JSON.stringify(msg));
    return true;
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}
