// Review queue UI: page through flagged sets, read each document next to the
// summary and the agents' rationales, record keep/remove overrides.
//
// The rendered view is a pure function of the last service responses held in
// `state`; every mutation goes through the service and the view re-renders
// only after the acknowledgement (no optimistic flips).

import type { ReviewApi, ReviewStats, SetDetail, SetSummary } from './api.js';

interface AppState {
  queue: SetSummary[];
  queueIndex: number;
  detail: SetDetail | null;
  stats: ReviewStats | null;
  selectedDoc: number; // 1-based index within detail.documents
  expandedAgents: Set<number>;
  loadError: string | null;
  toast: string | null;
}

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

function agreementLabel(stats: ReviewStats): string {
  if (stats.agreement === null) return 'n/a';
  return `${(stats.agreement * 100).toFixed(1)}%`;
}

export class ReviewApp {
  private state: AppState = {
    queue: [],
    queueIndex: 0,
    detail: null,
    stats: null,
    selectedDoc: 1,
    expandedAgents: new Set(),
    loadError: null,
    toast: null,
  };

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ReviewApi,
    public reviewer: string = 'reviewer',
  ) {
    this.root.addEventListener('click', (e) => this.onClick(e));
    document.addEventListener('keydown', (e) => this.onKey(e));
  }

  async start(): Promise<void> {
    await this.refreshQueue();
    if (this.state.queue.length > 0) {
      await this.openSet(this.state.queue[0]!.id);
    } else {
      this.render();
    }
  }

  async refreshQueue(): Promise<void> {
    try {
      const [list, stats] = await Promise.all([this.api.listSets('noisy_only', 1, 500), this.api.stats()]);
      this.state.queue = list.items;
      this.state.stats = stats;
      this.state.loadError = null;
    } catch (err) {
      this.state.loadError = err instanceof Error ? err.message : String(err);
    }
    this.render();
  }

  async openSet(id: string): Promise<void> {
    try {
      this.state.detail = await this.api.getSet(id);
      this.state.loadError = null;
      this.state.expandedAgents = new Set();
      this.state.queueIndex = Math.max(
        0,
        this.state.queue.findIndex((item) => item.id === id),
      );
      const firstFlagged = this.state.detail.documents.find((d) => d.flagged);
      this.state.selectedDoc = firstFlagged ? firstFlagged.index : 1;
    } catch (err) {
      this.state.loadError = err instanceof Error ? err.message : String(err);
    }
    this.render();
  }

  async openNextSet(): Promise<void> {
    const next = this.state.queue[this.state.queueIndex + 1];
    if (next) {
      await this.openSet(next.id);
    } else {
      this.state.toast = 'End of queue';
      this.render();
    }
  }

  async submitOverride(docIndex: number, action: 'keep' | 'remove', note = ''): Promise<void> {
    const detail = this.state.detail;
    if (!detail) return;
    try {
      await this.api.submitOverride(detail.id, docIndex, action, this.reviewer, note);
    } catch (err) {
      // Surface the failure and leave the view exactly as the service last
      // described it.
      this.state.toast = `Override failed: ${err instanceof Error ? err.message : String(err)}`;
      this.render();
      return;
    }
    // Render-after-ack: re-fetch the authoritative state.
    this.state.detail = await this.api.getSet(detail.id);
    this.state.stats = await this.api.stats();
    this.state.toast = null;
    this.advanceToNextFlagged(docIndex);
    this.render();
  }

  private advanceToNextFlagged(after: number): void {
    const detail = this.state.detail;
    if (!detail) return;
    const next = detail.documents.find((d) => d.index > after && d.flagged && d.override === null);
    if (next) this.state.selectedDoc = next.index;
  }

  private selectDocDelta(delta: number): void {
    const detail = this.state.detail;
    if (!detail || detail.documents.length === 0) return;
    const indices = detail.documents.map((d) => d.index);
    const position = indices.indexOf(this.state.selectedDoc);
    const target = indices[Math.min(indices.length - 1, Math.max(0, position + delta))];
    if (target !== undefined) {
      this.state.selectedDoc = target;
      this.render();
    }
  }

  private onKey(e: KeyboardEvent): void {
    if (e.target instanceof HTMLInputElement || e.target instanceof HTMLTextAreaElement) return;
    switch (e.key) {
      case 'k':
        void this.submitOverride(this.state.selectedDoc, 'keep');
        break;
      case 'x':
        void this.submitOverride(this.state.selectedDoc, 'remove');
        break;
      case 'j':
      case 'ArrowDown':
        this.selectDocDelta(1);
        break;
      case 'ArrowUp':
        this.selectDocDelta(-1);
        break;
      case 'Enter':
      case ']':
        void this.openNextSet();
        break;
    }
  }

  private onClick(e: Event): void {
    const target = e.target as HTMLElement;
    const action = target.dataset['action'];
    if (!action) return;
    if (action === 'keep' || action === 'remove') {
      void this.submitOverride(Number(target.dataset['doc']), action);
    } else if (action === 'open-set') {
      void this.openSet(target.dataset['set']!);
    } else if (action === 'next-set' || action === 'confirm-clean') {
      void this.openNextSet();
    } else if (action === 'toggle-agent') {
      const agentId = Number(target.dataset['agent']);
      if (this.state.expandedAgents.has(agentId)) {
        this.state.expandedAgents.delete(agentId);
      } else {
        this.state.expandedAgents.add(agentId);
      }
      this.render();
    } else if (action === 'retry') {
      void this.start();
    } else if (action === 'select-doc') {
      this.state.selectedDoc = Number(target.dataset['doc']);
      this.render();
    }
  }

  render(): void {
    this.root.innerHTML = [
      this.renderHeader(),
      this.state.toast ? `<div class="toast" role="alert">${escapeHtml(this.state.toast)}</div>` : '',
      this.state.loadError ? this.renderError() : this.renderBody(),
    ].join('\n');
  }

  private renderHeader(): string {
    const stats = this.state.stats;
    const progress = stats
      ? `reviewed <strong id="reviewed-count">${stats.reviewed}</strong> / ${stats.total_flagged} flagged sets
         &middot; agreement <strong id="agreement-rate">${agreementLabel(stats)}</strong>`
      : 'loading&hellip;';
    return `
      <header class="progress-header">
        <h1>Document review</h1>
        <div class="progress">${progress}</div>
        <div class="hint">k keep &middot; x remove &middot; j next document &middot; Enter next set</div>
      </header>`;
  }

  private renderError(): string {
    return `
      <section class="error-panel">
        <p>Could not reach the review service: ${escapeHtml(this.state.loadError ?? '')}</p>
        <button data-action="retry">Retry</button>
      </section>`;
  }

  private renderBody(): string {
    const detail = this.state.detail;
    if (!detail) {
      return `<section class="empty">No flagged sets in the queue.</section>`;
    }
    return `
      <main class="layout">
        <nav class="queue">${this.renderQueue()}</nav>
        <section class="set-view">${this.renderSet(detail)}</section>
        <aside class="rationales">${this.renderAgents(detail)}</aside>
      </main>`;
  }

  private renderQueue(): string {
    if (this.state.queue.length === 0) return '<p class="empty">Queue is empty.</p>';
    return this.state.queue
      .map((item, i) => {
        const current = i === this.state.queueIndex ? ' current' : '';
        return `
          <button class="queue-item${current}" data-action="open-set" data-set="${escapeHtml(item.id)}">
            ${escapeHtml(item.id)}
            <span class="queue-meta">${item.flagged_count}/${item.doc_count} flagged &middot; ${item.review_status}</span>
          </button>`;
      })
      .join('\n');
  }

  private renderSet(detail: SetDetail): string {
    const documents = detail.documents.map((doc) => this.renderDocument(detail, doc)).join('\n');
    const anyFlagged = detail.documents.some((d) => d.flagged);
    const cleanAction = anyFlagged
      ? ''
      : `<button class="confirm-clean" data-action="confirm-clean">Confirm clean &amp; next</button>`;
    return `
      <h2>${escapeHtml(detail.id)} <span class="split-badge">${escapeHtml(detail.split)}</span></h2>
      <article class="summary">
        <h3>Summary</h3>
        <p>${escapeHtml(detail.summary)}</p>
      </article>
      ${cleanAction}
      <div class="documents">${documents}</div>
      <button data-action="next-set">Next set</button>`;
  }

  private renderDocument(detail: SetDetail, doc: SetDetail['documents'][number]): string {
    const removed = doc.effective_action === 'removed';
    const selected = doc.index === this.state.selectedDoc ? ' selected' : '';
    const badges: string[] = [];
    if (doc.flagged) {
      badges.push(`<span class="badge badge-flagged">${doc.tally}/${detail.total_weight} agents</span>`);
    }
    if (doc.override) {
      badges.push(
        `<span class="badge badge-override">${doc.override.action === 'keep' ? 'kept' : 'removed'} by reviewer</span>`,
      );
    }
    return `
      <article class="document${removed ? ' removed' : ''}${selected}" data-doc-index="${doc.index}">
        <header>
          <span class="doc-title" data-action="select-doc" data-doc="${doc.index}">Document ${doc.index}</span>
          ${badges.join(' ')}
          <span class="controls">
            <button data-action="keep" data-doc="${doc.index}">keep</button>
            <button data-action="remove" data-doc="${doc.index}">remove</button>
          </span>
        </header>
        <p class="doc-content">${escapeHtml(doc.content)}</p>
      </article>`;
  }

  private renderAgents(detail: SetDetail): string {
    if (!detail.annotated) return '<p class="empty">Set was not annotated.</p>';
    const panels = detail.per_agent
      .map((agent) => {
        const expanded = this.state.expandedAgents.has(agent.agent_id);
        const abstained = agent.status !== 'ok' && agent.status !== 'none';
        const verdict = abstained
          ? `<span class="abstained">unparseable response</span>`
          : agent.flagged.length > 0
            ? `flags ${agent.flagged.map((i) => `Document ${i}`).join(', ')}`
            : 'flags none';
        const rationale = expanded
          ? `<p class="rationale">${escapeHtml(agent.rationale || '(empty)')}</p>`
          : '';
        return `
          <section class="agent${abstained ? ' agent-abstained' : ''}">
            <button data-action="toggle-agent" data-agent="${agent.agent_id}">
              Agent ${agent.agent_id}: ${verdict}
            </button>
            ${rationale}
          </section>`;
      })
      .join('\n');
    return `<h3>Agent rationales</h3>${panels}`;
  }
}
