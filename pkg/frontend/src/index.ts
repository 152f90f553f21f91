/**
 * Node bindings for the clustile chip-planning core.
 *
 * The core stays in Python; this package talks to it through the
 * line-JSON service shipped with it (`python -m clustile.bridge`), one
 * request per line, one response per line. Data crosses the pipe as
 * flat numeric arrays — boxes as 4N corner coordinates
 * [x1, y1, x2, y2, ...] with parallel score/category arrays — never as
 * object graphs. Both runtimes print shortest round-trip decimals and
 * parse correctly rounded, so finite doubles survive the crossing bit
 * for bit and results here are exactly what an in-process Python call
 * returns.
 *
 * Method names mirror the operation names on the Python side so greps
 * line up across the language boundary.
 */

import { spawn, type ChildProcessWithoutNullStreams } from 'node:child_process';
import { createInterface } from 'node:readline';

/** Must match the core library version; verified over the wire in tests. */
export const VERSION = '0.1.0';

/** Chip provenance codes used in ChipArrays.kinds. */
export const KIND_GLOBAL_PASS = 0;
export const KIND_CLUSTER = 1;
export const KIND_GRID = 2;

/** Merged clusters: 4N corner coordinates plus N scores. */
export interface MergedClusters {
    boxes: number[];
    scores: number[];
}

/**
 * One chip per row, fields as parallel arrays. Optional integer fields
 * (cluster_ids, partition_indices, grid_rows, grid_cols) hold -1 where
 * the chip kind has no such value, as do projected_scales.
 */
export interface ChipArrays {
    crops: number[];
    content_regions: number[];
    resize_factors: number[];
    kinds: number[];
    cluster_ids: number[];
    partition_indices: number[];
    grid_rows: number[];
    grid_cols: number[];
    projected_scales: number[];
    partition_depths: number[];
    boundary_clipped: number[];
}

export interface ClusterArrays {
    boxes: number[];
    scores: number[];
    member_counts: number[];
}

/** A full chip plan: pass this back verbatim to bind_fuse. */
export interface ChipPlanArrays {
    chips: ChipArrays;
    clusters: ClusterArrays;
}

/** Detections in one coordinate frame. */
export interface DetectionArrays {
    boxes: number[];
    scores: number[];
    categories: number[];
}

/** Chip-local detections; chip_index[i] is the row in ChipArrays. */
export interface ChipDetectionArrays extends DetectionArrays {
    chip_index: number[];
}

/** Detections tagged per image, for evaluation. */
export interface ImageDetectionArrays extends DetectionArrays {
    image_ids: number[];
}

export interface GroundTruthArrays {
    image_ids: number[];
    boxes: number[];
    categories: number[];
}

export interface ImageArrays {
    ids: number[];
    widths: number[];
    heights: number[];
}

/** Metric fields are null when no ground truth falls in the slice. */
export interface EvalMetrics {
    ap: number | null;
    ap50: number | null;
    ap75: number | null;
    ap_s: number | null;
    ap_m: number | null;
    ap_l: number | null;
    per_category: Record<string, number>;
    images_forwarded: number;
}

export interface PlanParams {
    merge_gap?: number;
    min_members?: number;
    score_mode?: string;
    tau?: number;
    topn?: number;
    detector_input?: number;
    scale_range?: [number, number];
    depth?: number;
    min_chip_side?: number;
}

export interface FuseParams {
    nms_iou?: number;
    max_final?: number;
    suppress_global_in_clusters?: boolean;
    center_rule?: boolean;
}

export interface EvalParams {
    iou_thresholds?: number[];
    size_buckets?: [number, number];
    max_dets?: number;
    recall_points?: number;
}

export interface BridgeOptions {
    /**
     * Python executable with the core package importable. Defaults to
     * the CLUSTILE_PYTHON environment variable, then "python3".
     */
    python?: string;
}

/**
 * A request was rejected, by client-side validation or by the service.
 * `index` is the offending element's position in the named array when a
 * single element is to blame, null for shape-level problems;
 * `errorType` is the raising exception class on the Python side (or
 * "BridgeError" for client-side rejections).
 */
export class BridgeError extends Error {
    readonly errorType: string;
    readonly index: number | null;

    constructor(errorType: string, message: string, index: number | null) {
        super(message);
        this.name = 'BridgeError';
        this.errorType = errorType;
        this.index = index;
    }
}

interface Pending {
    resolve: (value: unknown) => void;
    reject: (err: Error) => void;
}

function checkNumbers(name: string, values: readonly number[]): void {
    for (let i = 0; i < values.length; i++) {
        const v = values[i];
        if (typeof v !== 'number' || !Number.isFinite(v)) {
            throw new BridgeError('BridgeError', `${name}[${i}] is not a finite number`, i);
        }
    }
}

function checkBoxes(name: string, boxes: readonly number[], rows?: number): void {
    checkNumbers(name, boxes);
    if (boxes.length % 4 !== 0) {
        throw new BridgeError(
            'BridgeError',
            `${name} length must be a multiple of 4, got ${boxes.length}`,
            null,
        );
    }
    if (rows !== undefined && boxes.length !== 4 * rows) {
        throw new BridgeError(
            'BridgeError',
            `${name} must hold ${rows} boxes, got ${boxes.length / 4}`,
            null,
        );
    }
}

function checkDetections(prefix: string, dets: DetectionArrays): void {
    checkNumbers(`${prefix}.scores`, dets.scores);
    checkBoxes(`${prefix}.boxes`, dets.boxes, dets.scores.length);
    checkNumbers(`${prefix}.categories`, dets.categories);
    if (dets.categories.length !== dets.scores.length) {
        throw new BridgeError(
            'BridgeError',
            `${prefix}.categories must hold ${dets.scores.length} values, got ${dets.categories.length}`,
            null,
        );
    }
}

/**
 * A handle on one bridge process. Calls may be issued concurrently;
 * requests are stateless on the Python side and responses are matched
 * back by id. Call close() when done or the child process lingers.
 */
export class ClustileBridge {
    private readonly proc: ChildProcessWithoutNullStreams;
    private readonly pending = new Map<number, Pending>();
    private readonly exited: Promise<number | null>;
    private nextId = 1;
    private stderrTail = '';
    private closed = false;

    constructor(options: BridgeOptions = {}) {
        const python = options.python ?? process.env.CLUSTILE_PYTHON ?? 'python3';
        this.proc = spawn(python, ['-m', 'clustile.bridge'], {
            stdio: ['pipe', 'pipe', 'pipe'],
        });
        this.proc.stdin.on('error', () => {
            // surfaced through the close handler below
        });
        this.proc.stderr.setEncoding('utf8');
        this.proc.stderr.on('data', (chunk: string) => {
            this.stderrTail = (this.stderrTail + chunk).slice(-4000);
        });
        const lines = createInterface({ input: this.proc.stdout });
        lines.on('line', (line) => this.dispatch(line));
        this.exited = new Promise((resolve) => {
            this.proc.on('error', (err) => {
                this.failAll(new BridgeError('BridgeError', `failed to start ${python}: ${err.message}`, null));
                resolve(null); // no 'close' event after a failed spawn
            });
            this.proc.on('close', (code) => {
                const detail = this.stderrTail.trim();
                this.failAll(new BridgeError(
                    'BridgeError',
                    `bridge exited with code ${code}${detail ? `: ${detail}` : ''}`,
                    null,
                ));
                resolve(code);
            });
        });
    }

    /** The core library's version string. */
    async version(): Promise<string> {
        const result = await this.request<{ version: string }>('version', {});
        return result.version;
    }

    /**
     * Merge overlapping scored boxes: repeated merge passes until at
     * most n_max clusters remain (or a fixpoint), then top-n_max by
     * score. Output order is the core's: score descending.
     */
    async bind_icm(
        boxes: readonly number[],
        scores: readonly number[],
        tau: number,
        n_max: number,
    ): Promise<MergedClusters> {
        checkNumbers('scores', scores);
        checkBoxes('boxes', boxes, scores.length);
        return this.request('icm', { boxes, scores, tau, n_max });
    }

    /**
     * Whole-image detections to a chip plan: group into cluster
     * proposals, merge, estimate per-cluster scale, and plan chips
     * (whole-image pass first, then cluster chips). Planning is
     * category-blind, so detections carry no category array here.
     */
    async bind_plan(
        boxes: readonly number[],
        scores: readonly number[],
        image_size: readonly [number, number],
        params: PlanParams = {},
    ): Promise<ChipPlanArrays> {
        checkNumbers('scores', scores);
        checkBoxes('boxes', boxes, scores.length);
        checkNumbers('image_size', image_size);
        return this.request('plan', { boxes, scores, image_size, params });
    }

    /**
     * Fuse per-chip detections back into one global set. `plan` is a
     * bind_plan result passed back verbatim; global-pass detections go
     * in `global_dets` (image frame), chip detections in `chip_dets`
     * (chip-local frame, tagged with their ChipArrays row).
     */
    async bind_fuse(
        plan: ChipPlanArrays,
        global_dets: DetectionArrays,
        chip_dets: ChipDetectionArrays,
        params: FuseParams = {},
    ): Promise<DetectionArrays> {
        checkDetections('global', global_dets);
        checkDetections('chips', chip_dets);
        checkNumbers('chips.chip_index', chip_dets.chip_index);
        if (chip_dets.chip_index.length !== chip_dets.scores.length) {
            throw new BridgeError(
                'BridgeError',
                `chips.chip_index must hold ${chip_dets.scores.length} values, got ${chip_dets.chip_index.length}`,
                null,
            );
        }
        return this.request('fuse', {
            plan,
            global: global_dets,
            chips: chip_dets,
            params,
        });
    }

    /** COCO-style metrics at full float precision (nothing is rounded). */
    async bind_eval(
        detections: ImageDetectionArrays,
        ground_truth: GroundTruthArrays,
        images: ImageArrays,
        params: EvalParams = {},
    ): Promise<EvalMetrics> {
        checkDetections('detections', detections);
        checkNumbers('detections.image_ids', detections.image_ids);
        checkNumbers('ground_truth.image_ids', ground_truth.image_ids);
        checkBoxes('ground_truth.boxes', ground_truth.boxes, ground_truth.image_ids.length);
        checkNumbers('ground_truth.categories', ground_truth.categories);
        checkNumbers('images.ids', images.ids);
        return this.request('eval', { detections, ground_truth, images, params });
    }

    /** End the request stream and wait for the child to exit. */
    close(): Promise<number | null> {
        this.closed = true;
        this.proc.stdin.end();
        return this.exited;
    }

    private request<T>(op: string, args: object): Promise<T> {
        if (this.closed) {
            return Promise.reject(new BridgeError('BridgeError', 'bridge is closed', null));
        }
        const id = this.nextId++;
        const line = JSON.stringify({ id, op, args }) + '\n';
        return new Promise<T>((resolve, reject) => {
            this.pending.set(id, { resolve: resolve as (value: unknown) => void, reject });
            this.proc.stdin.write(line, (err) => {
                if (err && this.pending.delete(id)) {
                    reject(new BridgeError('BridgeError', `request failed: ${err.message}`, null));
                }
            });
        });
    }

    private dispatch(line: string): void {
        let response: {
            id?: unknown;
            ok?: boolean;
            result?: unknown;
            error?: { type: string; message: string; index: number | null };
        };
        try {
            response = JSON.parse(line);
        } catch {
            return; // not a response line; nothing to correlate it with
        }
        if (typeof response.id !== 'number') {
            return;
        }
        const entry = this.pending.get(response.id);
        if (!entry) {
            return;
        }
        this.pending.delete(response.id);
        if (response.ok) {
            entry.resolve(response.result);
        } else {
            const e = response.error ?? { type: 'BridgeError', message: 'malformed error', index: null };
            entry.reject(new BridgeError(e.type, e.message, e.index ?? null));
        }
    }

    private failAll(err: Error): void {
        const waiting = [...this.pending.values()];
        this.pending.clear();
        for (const entry of waiting) {
            entry.reject(err);
        }
    }
}
