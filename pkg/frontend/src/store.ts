/**
 * Client-side chat state: the transcript of one session plus the pending
 * flag that serializes sends. The store never talks to the DOM; the view
 * layer re-renders from snapshots.
 */

import { ApiClient, TurnSummary } from "./api.js";

export interface TranscriptEntry {
  turnId: string;
  userInput: string;
  reply: string;
  language: string;
}

export class ChatStore {
  private entries: TranscriptEntry[] = [];
  private pendingInput: string | null = null;

  constructor(readonly sessionId: string) {}

  get transcript(): readonly TranscriptEntry[] {
    return this.entries;
  }

  get pending(): string | null {
    return this.pendingInput;
  }

  beginTurn(userInput: string): void {
    if (this.pendingInput !== null) {
      throw new Error("a turn is already pending");
    }
    this.pendingInput = userInput;
  }

  completeTurn(turnId: string, reply: string, language: string): TranscriptEntry {
    if (this.pendingInput === null) {
      throw new Error("no pending turn to complete");
    }
    const entry: TranscriptEntry = {
      turnId,
      userInput: this.pendingInput,
      reply,
      language,
    };
    this.entries.push(entry);
    this.pendingInput = null;
    return entry;
  }

  failTurn(): void {
    this.pendingInput = null;
  }

  /** Rebuild the transcript from the server's turn log (page reload). */
  static fromTurns(sessionId: string, turns: TurnSummary[]): ChatStore {
    const store = new ChatStore(sessionId);
    for (const turn of turns) {
      store.entries.push({
        turnId: turn.turn_id,
        userInput: turn.user_input,
        reply: turn.reply,
        language: turn.language,
      });
    }
    return store;
  }

  static async load(client: ApiClient, sessionId: string): Promise<ChatStore> {
    return ChatStore.fromTurns(sessionId, await client.listTurns(sessionId));
  }

  /** Send one message through the API and record the result. */
  async send(client: ApiClient, message: string): Promise<TranscriptEntry> {
    this.beginTurn(message);
    try {
      const reply = await client.chat(this.sessionId, message);
      return this.completeTurn(reply.turn_id, reply.reply, reply.language);
    } catch (err) {
      this.failTurn();
      throw err;
    }
  }
}
