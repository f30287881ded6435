/** Typed client for the alignment service HTTP API.
 *
 * All pose math lives on the server; this client only moves JSON and
 * builds render URLs.
 */

export type Pose = number[][];

export interface CreateSessionRequest {
  mesh_path: string;
  calib_path: string;
  left_image_path: string;
  right_image_path: string;
  markers_path?: string | null;
  pose?: Pose | null;
  z_near?: number;
  z_far?: number;
}

export interface SessionInfo {
  session_id: string;
  pose: Pose;
  dz_accumulated: number;
  dz_bound: number;
  width: number;
  height: number;
  commit_count: number;
}

export interface DeltaRequest {
  rx?: number;
  ry?: number;
  rz?: number;
  dz?: number;
}

export interface PoseResponse {
  pose: Pose;
  dz_accumulated: number;
}

export interface CommitEntry {
  index: number;
  operator: string;
  timestamp: number;
  pose: Pose;
}

export interface RangeStats {
  minimum: number;
  maximum: number;
  mean: number;
  percentile_1: number;
  percentile_99: number;
}

export interface PreviewStats {
  valid_percent: number;
  occluded_percent: number;
  non_overlap_percent: number;
  outside_percent: number;
  disparity: RangeStats | null;
  depth: RangeStats | null;
}

export type RenderMode = "solid" | "wireframe" | "points";
export type Eye = "left" | "right" | "pair";

export interface RenderParams {
  eye: Eye;
  mode: RenderMode;
  alpha: number;
  swap: boolean;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class AlignClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  createSession(req: CreateSessionRequest): Promise<SessionInfo> {
    return this.post("/sessions", req);
  }

  getSession(sessionId: string): Promise<SessionInfo> {
    return this.request(`/sessions/${sessionId}`);
  }

  applyDelta(sessionId: string, delta: DeltaRequest): Promise<PoseResponse> {
    return this.post(`/sessions/${sessionId}/delta`, delta);
  }

  commit(sessionId: string, operator: string): Promise<CommitEntry> {
    return this.post(`/sessions/${sessionId}/commit`, { operator });
  }

  listCommits(sessionId: string): Promise<CommitEntry[]> {
    return this.request(`/sessions/${sessionId}/commits`);
  }

  preview(sessionId: string): Promise<PreviewStats> {
    return this.request(`/sessions/${sessionId}/preview`);
  }

  /** URL for the stereo render; `revision` busts the browser cache after
   * each acknowledged pose change. */
  renderUrl(sessionId: string, params: RenderParams, revision: number): string {
    const q = new URLSearchParams({
      eye: params.eye,
      mode: params.mode,
      alpha: params.alpha.toString(),
      swap: params.swap.toString(),
      rev: revision.toString(),
    });
    return `${this.baseUrl}/sessions/${sessionId}/render?${q.toString()}`;
  }
}
