// In-memory mirror of the server session. The server log is the single
// source of truth: everything here is rebuilt from the API after a reload,
// and optimistic updates are rolled back when the server says no.

import type { AnnotatorRequest, SessionState } from "./api.js";

export type SubmittedLabel = {
  requestId: string;
  clusterId: number;
  labelId: number;
};

export type UiSession = {
  session: SessionState | null;
  current: AnnotatorRequest | null;
  history: SubmittedLabel[];
  error: string | null;
  done: boolean;
  empty: boolean;
};

export function initialState(): UiSession {
  return { session: null, current: null, history: [], error: null, done: false, empty: false };
}

export function sessionLoaded(state: UiSession, session: SessionState | null): UiSession {
  if (session === null) {
    return { ...state, session: null, current: null, empty: true, done: true };
  }
  const done = session.pending === 0;
  return { ...state, session, done, empty: session.totalClusters === 0, error: null };
}

export function requestLoaded(state: UiSession, request: AnnotatorRequest | null): UiSession {
  if (request === null) {
    return { ...state, current: null, done: true };
  }
  return { ...state, current: request, done: false };
}

export function optimisticSubmit(state: UiSession, entry: SubmittedLabel): UiSession {
  const session = state.session
    ? { ...state.session, labeled: state.session.labeled + 1, pending: state.session.pending - 1 }
    : null;
  return { ...state, session, history: [...state.history, entry] };
}

export function confirmSubmit(state: UiSession, labeled: number, pending: number): UiSession {
  const session = state.session ? { ...state.session, labeled, pending } : null;
  return { ...state, session, error: null };
}

export function rollbackSubmit(state: UiSession, requestId: string,
                               message: string | null): UiSession {
  const rolled = state.history.filter((entry) => entry.requestId !== requestId);
  let session = state.session;
  if (session && rolled.length !== state.history.length) {
    session = { ...session, labeled: session.labeled - 1, pending: session.pending + 1 };
  }
  return { ...state, session, history: rolled, error: message };
}

export function networkFailure(state: UiSession, message: string): UiSession {
  return { ...state, error: message };
}

export function clearError(state: UiSession): UiSession {
  return { ...state, error: null };
}

export function progressFraction(state: UiSession): number {
  if (!state.session || state.session.totalClusters === 0) return 0;
  return state.session.labeled / state.session.totalClusters;
}

export function labelCounts(state: UiSession): Map<number, number> {
  const counts = new Map<number, number>();
  for (const entry of state.history) {
    counts.set(entry.labelId, (counts.get(entry.labelId) ?? 0) + 1);
  }
  return counts;
}

// Keyboard shortcuts: digits map to label ids 0-9, letters continue from 10.
export function labelIdForKey(key: string, vocabularySize: number): number | null {
  let id: number | null = null;
  if (/^[0-9]$/.test(key)) id = Number(key);
  else if (/^[a-z]$/.test(key)) id = 10 + key.charCodeAt(0) - 97;
  if (id === null || id >= vocabularySize) return null;
  return id;
}
