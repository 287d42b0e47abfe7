// Typed client for the annotation server HTTP API.
//
// Submission guarantee: at most one POST per request id ever leaves this
// client. Repeats while a POST is in flight share its promise, settled ids
// short-circuit, and a 409 (someone else answered first, e.g. a second tab)
// counts as already-labeled.

export type LabelEntry = { id: number; name: string };

export type SessionState = {
  sessionId: string;
  participantId: string;
  totalClusters: number;
  labeled: number;
  pending: number;
  labels: LabelEntry[];
};

export type AnnotatorRequest = {
  requestId: string;
  participantId: string;
  clusterId: number;
  clipIndex: number;
  startS: number;
  endS: number;
  mediaHint: string | null;
  memberCount: number | null;
};

export type SubmitOutcome =
  | { kind: "accepted"; labeled: number; pending: number }
  | { kind: "already-labeled" }
  | { kind: "rejected"; message: string };

type RawSession = {
  session_id: string;
  participant_id: string;
  total_clusters: number;
  labeled: number;
  pending: number;
  labels: LabelEntry[];
};

type RawRequest = {
  request_id: string;
  participant_id: string;
  cluster_id: number;
  clip_index: number;
  start_s: number;
  end_s: number;
  media_hint: string | null;
  member_count: number | null;
};

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export class AnnoClient {
  private inFlight = new Map<string, Promise<SubmitOutcome>>();
  private completed = new Set<string>();

  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  /** Session summary, or null when no session is open (404). */
  async session(): Promise<SessionState | null> {
    const res = await this.fetchFn(`${this.baseUrl}/api/session`);
    if (res.status === 404) return null;
    if (!res.ok) throw new ApiError(res.status, `session fetch failed (${res.status})`);
    const raw = (await res.json()) as RawSession;
    return {
      sessionId: raw.session_id,
      participantId: raw.participant_id,
      totalClusters: raw.total_clusters,
      labeled: raw.labeled,
      pending: raw.pending,
      labels: raw.labels,
    };
  }

  /** Lowest-cluster-id pending request, or null when everything is labeled. */
  async nextRequest(): Promise<AnnotatorRequest | null> {
    const res = await this.fetchFn(`${this.baseUrl}/api/requests/next`);
    if (res.status === 204 || res.status === 404) return null;
    if (!res.ok) throw new ApiError(res.status, `request fetch failed (${res.status})`);
    const raw = (await res.json()) as RawRequest;
    return {
      requestId: raw.request_id,
      participantId: raw.participant_id,
      clusterId: raw.cluster_id,
      clipIndex: raw.clip_index,
      startS: raw.start_s,
      endS: raw.end_s,
      mediaHint: raw.media_hint,
      memberCount: raw.member_count,
    };
  }

  submitLabel(requestId: string, labelId: number): Promise<SubmitOutcome> {
    if (this.completed.has(requestId)) {
      return Promise.resolve({ kind: "already-labeled" });
    }
    const running = this.inFlight.get(requestId);
    if (running) return running;
    const attempt = this.post(requestId, labelId).finally(() => {
      this.inFlight.delete(requestId);
    });
    this.inFlight.set(requestId, attempt);
    return attempt;
  }

  mediaUrl(hint: string): string {
    return `${this.baseUrl}/assets/${hint}`;
  }

  private async post(requestId: string, labelId: number): Promise<SubmitOutcome> {
    const res = await this.fetchFn(
      `${this.baseUrl}/api/requests/${encodeURIComponent(requestId)}/label`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ label_id: labelId }),
      },
    );
    if (res.status === 200) {
      this.completed.add(requestId);
      const body = (await res.json()) as { labeled: number; pending: number };
      return { kind: "accepted", labeled: body.labeled, pending: body.pending };
    }
    if (res.status === 409) {
      this.completed.add(requestId);
      return { kind: "already-labeled" };
    }
    const message = await res.text();
    return { kind: "rejected", message: `label rejected (${res.status}): ${message}` };
  }
}
