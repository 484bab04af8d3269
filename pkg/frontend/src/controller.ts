// State machine behind the county console: map entities, officer
// subscriptions and walks, and popup decisions. Every mutation goes through
// the island's public HTTP surface (statements, feed intake, event stream);
// the map can always be reconciled against /query.

import { IslandClient } from "./api.js";

export type MarkerKind = "tweet" | "threatening_event" | "officer" | "event_circle";

export interface MapEntity {
  kind: MarkerKind;
  id: string;
  x: number;
  y: number;
  label?: string;
  radiusKm?: number;
  payload?: unknown;
}

export interface Popup {
  id: string;
  officerId: number;
  tweetText: string;
  tweetX: number;
  tweetY: number;
  decision: "go" | "stay";
  at: number;
}

export interface OfficerState {
  oid: number;
  x: number;
  y: number;
  subscriptionId: string;
  auto: boolean; // random walk until dragged
  target: { x: number; y: number } | null; // set by a "go" decision
}

export interface ControllerOptions {
  locationFeedUrl: string;
  dataverse?: string;
  channel?: string;
  brokerName?: string;
  seed?: number;
  oidBase?: number;
  now?: () => number;
}

/** Deterministic PRNG so demo walks and go/stay choices replay. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export class ConsoleController {
  readonly entities = new Map<string, MapEntity>();
  readonly popups: Popup[] = [];
  readonly officers = new Map<number, OfficerState>();
  onChange: (() => void) | null = null;

  private readonly dataverse: string;
  private readonly channel: string;
  private readonly brokerName: string;
  private readonly rng: () => number;
  private readonly now: () => number;
  private nextOid: number;
  private eventCounter = 0;

  constructor(
    private readonly client: IslandClient,
    private readonly opts: ControllerOptions,
  ) {
    this.dataverse = opts.dataverse ?? "ocsd";
    this.channel = opts.channel ?? "ThreateningEventsNear";
    this.brokerName = opts.brokerName ?? "console";
    this.rng = mulberry32(opts.seed ?? 1);
    this.now = opts.now ?? Date.now;
    this.nextOid = opts.oidBase ?? 9000;
  }

  /** Register the console's broker (deliveries land in the island's sink;
   * the console watches them on the event stream). */
  async setup(): Promise<void> {
    try {
      await this.client.statements(
        `USE ${this.dataverse};\n` +
        `CREATE BROKER ${this.brokerName} AT "${this.client.base}/sink";`,
      );
    } catch (err) {
      if (!String(err).includes("already exists")) throw err;
    }
  }

  // -- operator actions -------------------------------------------------------

  /** Draw-a-circle action: inserts one event record. */
  async addEvent(x: number, y: number, radiusKm: number, name?: string): Promise<string> {
    if (!(radiusKm > 0)) throw new Error("event radius must be positive");
    this.eventCounter += 1;
    const label = name ?? `event ${this.eventCounter}`;
    await this.client.statements(
      `USE ${this.dataverse};\n` +
      `INSERT INTO Events ({"eid": uuid("${randomUuid(this.rng)}"), ` +
      `"name": "${label}", "location": point("${x},${y}"), ` +
      `"event_duration": duration("PT10S"), "radius_km": ${radiusKm}});`,
    );
    const id = `event:${label}`;
    this.entities.set(id, { kind: "event_circle", id, x, y, radiusKm, label });
    this.onChange?.();
    return id;
  }

  /** Drop-an-officer action: subscribe under a fresh id and start updates. */
  async addOfficer(x: number, y: number): Promise<number> {
    const oid = this.nextOid++;
    const results = await this.client.statements(
      `USE ${this.dataverse};\n` +
      `SUBSCRIBE TO ${this.channel}(${oid}) ON ${this.brokerName};`,
    );
    const subscriptionId = results[results.length - 1].subscriptionId!;
    await this.client.postLocation(this.opts.locationFeedUrl, oid, x, y);
    this.officers.set(oid, { oid, x, y, subscriptionId, auto: true, target: null });
    this.setOfficerMarker(oid, x, y);
    return oid;
  }

  /** Drag: position pinned by the operator; the auto-walk stops. */
  async dragOfficer(oid: number, x: number, y: number): Promise<void> {
    const officer = this.must(oid);
    officer.x = x;
    officer.y = y;
    officer.auto = false;
    officer.target = null;
    await this.client.postLocation(this.opts.locationFeedUrl, oid, x, y);
    this.setOfficerMarker(oid, x, y);
  }

  async removeOfficer(oid: number): Promise<void> {
    const officer = this.must(oid);
    await this.client.statements(
      `USE ${this.dataverse}; UNSUBSCRIBE "${officer.subscriptionId}";`,
    );
    this.officers.delete(oid);
    this.entities.delete(`officer:${oid}`);
    this.onChange?.();
  }

  /** One animation step: auto officers wander, "go" officers close in on
   * their tweet; every move is posted to the location feed. */
  async tick(stepSize = 0.0008): Promise<void> {
    for (const officer of this.officers.values()) {
      if (officer.target) {
        const dx = officer.target.x - officer.x;
        const dy = officer.target.y - officer.y;
        if (Math.hypot(dx, dy) < 1e-4) {
          officer.target = null;
        } else {
          officer.x += dx * 0.2;
          officer.y += dy * 0.2;
        }
      } else if (officer.auto) {
        officer.x += (this.rng() - 0.5) * 2 * stepSize;
        officer.y += (this.rng() - 0.5) * 2 * stepSize;
      } else {
        continue;
      }
      await this.client.postLocation(
        this.opts.locationFeedUrl, officer.oid, officer.x, officer.y,
      );
      this.setOfficerMarker(officer.oid, officer.x, officer.y);
    }
  }

  // -- live events ----------------------------------------------------------------

  handleEvent(type: string, payload: unknown): void {
    const data = payload as Record<string, any>;
    if (type === "dataset_insert") {
      if (data.dataset === "LocalThreateningTweets") this.markIncomingTweets(data.value);
      return;
    }
    if (type !== "notification") return;
    if (data.broker !== this.brokerName) return;
    const envelope = data.envelope as Record<string, any>;
    if (envelope.channelName !== this.channel) return;
    for (const item of envelope.results ?? []) {
      this.handleNotification(envelope, item);
    }
  }

  /** Red markers for detections arriving over the bridge. */
  private markIncomingTweets(envelope: Record<string, any>): void {
    for (const item of envelope.results ?? []) {
      const result = item.result ?? {};
      const location = result.location;
      if (!Array.isArray(location)) continue;
      const id = `tweet:${result.text}`;
      if (this.entities.has(id)) continue; // reconnects must not duplicate
      this.entities.set(id, {
        kind: "tweet", id, x: location[0], y: location[1],
        label: result.text, payload: result,
      });
    }
    this.onChange?.();
  }

  /** Black marker plus the officer's popup decision window. */
  private handleNotification(envelope: Record<string, any>, item: Record<string, any>): void {
    const result = item.result ?? {};
    const content = result.tweet_content ?? {};
    const location = Array.isArray(content.location) ? content.location : [0, 0];
    const popupId = `${item.subscriptionId}:${envelope.channelExecutionEpochTime}:${content.text}`;
    if (this.popups.some((p) => p.id === popupId)) return;
    const markerId = `threat:${content.text}`;
    this.entities.set(markerId, {
      kind: "threatening_event", id: markerId,
      x: location[0], y: location[1], label: content.text, payload: result,
    });
    const officer = this.officerForSubscription(String(item.subscriptionId));
    if (!officer) return;
    const decision: "go" | "stay" = this.rng() < 0.5 ? "go" : "stay";
    this.popups.push({
      id: popupId, officerId: officer.oid, tweetText: String(content.text ?? ""),
      tweetX: location[0], tweetY: location[1], decision, at: this.now(),
    });
    if (decision === "go") {
      officer.target = { x: location[0], y: location[1] };
    }
    this.onChange?.();
  }

  // -- reconciliation ----------------------------------------------------------------

  /** After quiescence the marker set must equal the island's queryable
   * state; officers and event circles are refreshed from /query. */
  async reconcile(): Promise<void> {
    const events = (await this.client.query(
      `USE ${this.dataverse}; SELECT e.name, e.location, e.radius_km FROM Events e;`,
    )) as Array<{ name: string; location: [number, number]; radius_km: number }>;
    for (const event of events) {
      const id = `event:${event.name}`;
      this.entities.set(id, {
        kind: "event_circle", id, x: event.location[0], y: event.location[1],
        radiusKm: event.radius_km, label: event.name,
      });
    }
    const officers = (await this.client.query(
      `USE ${this.dataverse}; SELECT o.oid, o.location FROM OfficerLocations o;`,
    )) as Array<{ oid: number; location: [number, number] }>;
    for (const row of officers) {
      const officer = this.officers.get(row.oid);
      if (officer) this.setOfficerMarker(row.oid, row.location[0], row.location[1]);
    }
    this.onChange?.();
  }

  // -- helpers ----------------------------------------------------------------------

  private officerForSubscription(subscriptionId: string): OfficerState | undefined {
    for (const officer of this.officers.values()) {
      if (officer.subscriptionId === subscriptionId) return officer;
    }
    return undefined;
  }

  private setOfficerMarker(oid: number, x: number, y: number): void {
    const id = `officer:${oid}`;
    this.entities.set(id, { kind: "officer", id, x, y, label: `officer ${oid}` });
    this.onChange?.();
  }

  private must(oid: number): OfficerState {
    const officer = this.officers.get(oid);
    if (!officer) throw new Error(`unknown officer ${oid}`);
    return officer;
  }
}

function randomUuid(rng: () => number): string {
  const hex = () => Math.floor(rng() * 16).toString(16);
  const chunk = (n: number) => Array.from({ length: n }, hex).join("");
  return `${chunk(8)}-${chunk(4)}-${chunk(4)}-${chunk(4)}-${chunk(12)}`;
}
