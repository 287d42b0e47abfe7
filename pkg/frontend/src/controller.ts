// Framework-free session controller. The DOM layer only renders the state
// it publishes and forwards button presses to chooseLabel, so tests (and the
// scripted acceptance session) drive exactly the submission path the UI uses.

import { AnnoClient } from "./api.js";
import {
  UiSession,
  clearError,
  confirmSubmit,
  initialState,
  networkFailure,
  optimisticSubmit,
  requestLoaded,
  rollbackSubmit,
  sessionLoaded,
} from "./state.js";

function describe(error: unknown): string {
  if (error instanceof Error) return error.message;
  return String(error);
}

export class AnnotatorController {
  state: UiSession = initialState();

  constructor(
    private readonly client: AnnoClient,
    private readonly onChange: (state: UiSession) => void = () => {},
  ) {}

  private set(next: UiSession): void {
    this.state = next;
    this.onChange(next);
  }

  /** Load (or restore, after a reload) the session and the next request. */
  async start(): Promise<void> {
    try {
      const session = await this.client.session();
      this.set(sessionLoaded(this.state, session));
      if (session && session.totalClusters > 0) {
        await this.advance();
      }
    } catch (error) {
      this.set(networkFailure(this.state, describe(error)));
    }
  }

  async advance(): Promise<void> {
    try {
      const request = await this.client.nextRequest();
      this.set(requestLoaded(this.state, request));
    } catch (error) {
      this.set(networkFailure(this.state, describe(error)));
    }
  }

  /** Label-button handler. Double clicks are absorbed: once the current
   * request has a history entry no second submission can start. */
  async chooseLabel(labelId: number): Promise<void> {
    const current = this.state.current;
    if (!current || this.state.done) return;
    if (this.state.history.some((entry) => entry.requestId === current.requestId)) return;
    const entry = { requestId: current.requestId, clusterId: current.clusterId, labelId };
    this.set(optimisticSubmit(this.state, entry));
    try {
      const outcome = await this.client.submitLabel(current.requestId, labelId);
      if (outcome.kind === "accepted") {
        this.set(confirmSubmit(this.state, outcome.labeled, outcome.pending));
        await this.advance();
      } else if (outcome.kind === "already-labeled") {
        // another submission won the race: the server state is the truth
        this.set(rollbackSubmit(this.state, entry.requestId, null));
        await this.refreshSession();
        await this.advance();
      } else {
        this.set(rollbackSubmit(this.state, entry.requestId, outcome.message));
      }
    } catch (error) {
      this.set(rollbackSubmit(this.state, entry.requestId, null));
      this.set(networkFailure(this.state, describe(error)));
    }
  }

  /** Retry banner handler: nothing is lost, just re-fetch. */
  async retry(): Promise<void> {
    this.set(clearError(this.state));
    if (!this.state.session) {
      await this.start();
    } else {
      await this.refreshSession();
      await this.advance();
    }
  }

  private async refreshSession(): Promise<void> {
    try {
      const session = await this.client.session();
      this.set(sessionLoaded(this.state, session));
    } catch (error) {
      this.set(networkFailure(this.state, describe(error)));
    }
  }
}
