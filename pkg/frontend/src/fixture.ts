// In-memory stand-in for the review service, mirroring its semantics:
// append-only overrides with latest-timestamp-wins, vote flags from the
// decisions, and an export that retains overridden-kept documents.

import type {
  AgentView,
  OverrideAck,
  OverrideRecord,
  ReviewApi,
  ReviewFilter,
  ReviewStats,
  SetDetail,
  SetList,
} from './api.js';

export interface FixtureSet {
  id: string;
  split: string;
  summary: string;
  documents: string[];
  noisy: number[];
  agents: AgentView[];
  totalWeight: number;
}

export interface ExportRecord {
  id: string;
  split: string;
  summary: string;
  documents: string[];
}

export class FixtureService implements ReviewApi {
  private overrides: OverrideRecord[] = [];
  private clock = 0;
  failNextOverride = false;

  constructor(private readonly sets: FixtureSet[]) {}

  private effectiveOverrides(): Map<string, OverrideRecord> {
    const effective = new Map<string, OverrideRecord>();
    for (const record of this.overrides) {
      const key = `${record.set_id}:${record.doc_index}`;
      const current = effective.get(key);
      if (!current || record.timestamp >= current.timestamp) {
        effective.set(key, record);
      }
    }
    return effective;
  }

  private reviewStatus(set: FixtureSet, effective: Map<string, OverrideRecord>): string {
    const overridden = new Set(
      [...effective.values()].filter((o) => o.set_id === set.id).map((o) => o.doc_index),
    );
    if (overridden.size === 0) return 'untouched';
    if (set.noisy.every((i) => overridden.has(i))) return 'confirmed';
    return 'partially_reviewed';
  }

  async listSets(filter: ReviewFilter, page = 1, pageSize = 50): Promise<SetList> {
    const effective = this.effectiveOverrides();
    const items = this.sets
      .filter((set) => {
        if (filter === 'noisy_only') return set.noisy.length > 0;
        if (filter === 'quarantine_candidates') return set.noisy.length === set.documents.length;
        if (filter === 'unreviewed') {
          return set.noisy.length > 0 && this.reviewStatus(set, effective) !== 'confirmed';
        }
        return true;
      })
      .sort((a, b) => a.id.localeCompare(b.id))
      .map((set) => ({
        id: set.id,
        doc_count: set.documents.length,
        flagged_count: set.noisy.length,
        review_status: this.reviewStatus(set, effective),
      }));
    const start = (page - 1) * pageSize;
    return { items: items.slice(start, start + pageSize), page, page_size: pageSize, total: items.length };
  }

  async getSet(id: string): Promise<SetDetail> {
    const set = this.sets.find((s) => s.id === id);
    if (!set) throw new Error(`unknown set '${id}'`);
    const effective = this.effectiveOverrides();
    return {
      id: set.id,
      split: set.split,
      summary: set.summary,
      total_weight: set.totalWeight,
      annotated: true,
      review_status: this.reviewStatus(set, effective),
      per_agent: set.agents,
      documents: set.documents.map((content, i) => {
        const index = i + 1;
        const flagged = set.noisy.includes(index);
        const override = effective.get(`${set.id}:${index}`) ?? null;
        const effectiveAction = override ? (override.action === 'keep' ? 'kept' : 'removed') : flagged ? 'removed' : 'kept';
        const tally = flagged
          ? set.agents.filter((a) => a.flagged.includes(index)).length
          : 0;
        return { index, content, tally, flagged, effective_action: effectiveAction, override };
      }),
    };
  }

  async submitOverride(
    id: string,
    docIndex: number,
    action: 'keep' | 'remove',
    reviewer: string,
    note = '',
  ): Promise<OverrideAck> {
    if (this.failNextOverride) {
      this.failNextOverride = false;
      throw new Error('network unreachable');
    }
    const set = this.sets.find((s) => s.id === id);
    if (!set) throw new Error(`unknown set '${id}'`);
    if (docIndex < 1 || docIndex > set.documents.length) {
      throw new Error(`set '${id}' has ${set.documents.length} documents, got index ${docIndex}`);
    }
    this.clock += 1;
    const record: OverrideRecord = {
      set_id: id,
      doc_index: docIndex,
      action,
      reviewer,
      note,
      timestamp: `2024-01-01T00:00:${String(this.clock).padStart(2, '0')}+00:00`,
    };
    this.overrides.push(record);
    const effective = this.effectiveOverrides();
    const winner = effective.get(`${id}:${docIndex}`)!;
    return {
      recorded: record,
      effective_action: winner.action === 'keep' ? 'kept' : 'removed',
      review_status: this.reviewStatus(set, effective),
    };
  }

  async stats(): Promise<ReviewStats> {
    const effective = this.effectiveOverrides();
    const flagged = this.sets.filter((s) => s.noisy.length > 0);
    const statusCounts: Record<string, number> = { untouched: 0, partially_reviewed: 0, confirmed: 0 };
    let reviewed = 0;
    let correct = 0;
    for (const set of flagged) {
      const status = this.reviewStatus(set, effective);
      statusCounts[status] = (statusCounts[status] ?? 0) + 1;
      if (status !== 'confirmed') continue;
      reviewed += 1;
      const overturned = [...effective.values()].some(
        (o) =>
          o.set_id === set.id &&
          ((o.action === 'keep' && set.noisy.includes(o.doc_index)) ||
            (o.action === 'remove' && !set.noisy.includes(o.doc_index))),
      );
      if (!overturned) correct += 1;
    }
    return {
      total_flagged: flagged.length,
      reviewed,
      status_counts: statusCounts,
      agreement: reviewed > 0 ? correct / reviewed : null,
    };
  }

  // Mirrors GET /api/export: overrides win, survivors keep order, sets with
  // zero survivors move to quarantine with their documents intact.
  exportCorpus(): ExportRecord[] {
    const effective = this.effectiveOverrides();
    return this.sets.map((set) => {
      const survivors = set.documents.filter((_, i) => {
        const index = i + 1;
        const override = effective.get(`${set.id}:${index}`);
        if (override) return override.action === 'keep';
        return !set.noisy.includes(index);
      });
      if (survivors.length === 0) {
        return { id: set.id, split: 'quarantine', summary: set.summary, documents: set.documents };
      }
      return { id: set.id, split: set.split, summary: set.summary, documents: survivors };
    });
  }
}

export function agentViews(noisy: number[], unparseableAgent: number | null = null): AgentView[] {
  const agents: AgentView[] = [];
  for (let id = 1; id <= 5; id += 1) {
    if (id === unparseableAgent) {
      agents.push({ agent_id: id, status: 'unparseable', flagged: [], rationale: 'mangled text' });
    } else if (id === 5) {
      agents.push({ agent_id: id, status: 'none', flagged: [], rationale: 'agent 5 sees no problem' });
    } else {
      agents.push({
        agent_id: id,
        status: noisy.length > 0 ? 'ok' : 'none',
        flagged: noisy,
        rationale: `agent ${id} compared every document against the summary`,
      });
    }
  }
  return agents;
}

export function noisySetFixture(): FixtureSet[] {
  return [
    {
      id: 'set-a',
      split: 'train',
      summary: 'Researchers reported early results from a malaria vaccine trial.',
      documents: [
        'This page is an archived snapshot and may not reflect later updates.',
        'Researchers announced a new vaccine target against the malaria parasite.',
        'Please enable cookies to continue reading this website.',
      ],
      noisy: [1, 3],
      agents: agentViews([1, 3]),
      totalWeight: 5,
    },
    {
      id: 'set-b',
      split: 'train',
      summary: 'The central library reopened after renovation.',
      documents: [
        'The library reopened with a new children\'s wing.',
        'Sign-ups tripled during opening weekend.',
      ],
      noisy: [],
      agents: agentViews([]),
      totalWeight: 5,
    },
    {
      id: 'set-c',
      split: 'validation',
      summary: 'A levee breach flooded the river district.',
      documents: [
        'You can add location information to your posts.',
        'Subscribe for unlimited access to local journalism.',
      ],
      noisy: [1, 2],
      agents: agentViews([1, 2], 4),
      totalWeight: 4,
    },
  ];
}
