// Typed client for the review service JSON API.

export interface SetSummary {
  id: string;
  doc_count: number;
  flagged_count: number;
  review_status: string;
}

export interface SetList {
  items: SetSummary[];
  page: number;
  page_size: number;
  total: number;
}

export interface OverrideRecord {
  set_id: string;
  doc_index: number;
  action: 'keep' | 'remove';
  reviewer: string;
  timestamp: string;
  note: string;
}

export interface DocumentView {
  index: number;
  content: string;
  tally: number;
  flagged: boolean;
  effective_action: 'kept' | 'removed';
  override: OverrideRecord | null;
}

export interface AgentView {
  agent_id: number;
  status: string;
  flagged: number[];
  rationale: string;
}

export interface SetDetail {
  id: string;
  split: string;
  summary: string;
  total_weight: number;
  annotated: boolean;
  documents: DocumentView[];
  per_agent: AgentView[];
  review_status: string;
}

export interface ReviewStats {
  total_flagged: number;
  reviewed: number;
  status_counts: Record<string, number>;
  agreement: number | null;
}

export interface OverrideAck {
  recorded: OverrideRecord;
  effective_action: 'kept' | 'removed';
  review_status: string;
}

export type ReviewFilter = 'all' | 'noisy_only' | 'quarantine_candidates' | 'unreviewed';

// The app depends on this surface only, so tests can swap in a fixture service.
export interface ReviewApi {
  listSets(filter: ReviewFilter, page?: number, pageSize?: number): Promise<SetList>;
  getSet(id: string): Promise<SetDetail>;
  submitOverride(
    id: string,
    docIndex: number,
    action: 'keep' | 'remove',
    reviewer: string,
    note?: string,
  ): Promise<OverrideAck>;
  stats(): Promise<ReviewStats>;
}

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

async function asJson<T>(response: Response): Promise<T> {
  let payload: unknown = null;
  try {
    payload = await response.json();
  } catch {
    // fall through: non-JSON body
  }
  if (!response.ok) {
    const detail =
      payload && typeof payload === 'object' && 'error' in payload
        ? String((payload as { error: unknown }).error)
        : `HTTP ${response.status}`;
    throw new ApiError(detail, response.status);
  }
  return payload as T;
}

export class ApiClient implements ReviewApi {
  constructor(private readonly baseUrl: string = '') {}

  listSets(filter: ReviewFilter, page = 1, pageSize = 50): Promise<SetList> {
    const params = new URLSearchParams({
      filter,
      page: String(page),
      page_size: String(pageSize),
    });
    return fetch(`${this.baseUrl}/api/sets?${params}`).then((r) => asJson<SetList>(r));
  }

  getSet(id: string): Promise<SetDetail> {
    return fetch(`${this.baseUrl}/api/sets/${encodeURIComponent(id)}`).then((r) => asJson<SetDetail>(r));
  }

  submitOverride(
    id: string,
    docIndex: number,
    action: 'keep' | 'remove',
    reviewer: string,
    note = '',
  ): Promise<OverrideAck> {
    return fetch(`${this.baseUrl}/api/sets/${encodeURIComponent(id)}/overrides`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ doc_index: docIndex, action, reviewer, note }),
    }).then((r) => asJson<OverrideAck>(r));
  }

  stats(): Promise<ReviewStats> {
    return fetch(`${this.baseUrl}/api/stats`).then((r) => asJson<ReviewStats>(r));
  }
}
