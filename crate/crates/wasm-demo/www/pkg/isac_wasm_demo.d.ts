/* tslint:disable */
/* eslint-disable */

/**
 * Outcome of one alternating-optimization run.
 */
export class AoRun {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Data powers in mW.
     */
    readonly data: Float64Array;
    readonly feasible: boolean;
    /**
     * Sum-rate bound at the start point followed by one value per iteration.
     */
    readonly objectives: Float64Array;
    /**
     * Pilot powers in mW.
     */
    readonly pilot: Float64Array;
}

/**
 * Normalized gain `|uᴴa(θ)|²` of the statistical sensing combiner over
 * `points` angles in [−90°, 90°]. Returns `[theta_deg_0, gain_0, ...]`.
 */
export function beampattern(users: number, antennas: number, power_dbm: number, target_distance: number, seed: bigint, points: number): Float64Array;

/**
 * Average detection probability under equal power split, one value per
 * total-power point. Returns `[p_tot_dbm_0, pd_0, p_tot_dbm_1, pd_1, ...]`.
 */
export function detection_curve(users: number, antennas: number, target_distance: number, seed: bigint, p_min_dbm: number, p_max_dbm: number, steps: number): Float64Array;

export function run_power_allocation(users: number, antennas: number, power_dbm: number, target_distance: number, seed: bigint, max_outer: number): AoRun;

/**
 * Target direction seen from the array, in degrees.
 */
export function target_angle_deg(users: number, target_distance: number, seed: bigint): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_aorun_free: (a: number, b: number) => void;
    readonly aorun_data: (a: number) => [number, number];
    readonly aorun_feasible: (a: number) => number;
    readonly aorun_objectives: (a: number) => [number, number];
    readonly aorun_pilot: (a: number) => [number, number];
    readonly beampattern: (a: number, b: number, c: number, d: number, e: bigint, f: number) => [number, number, number, number];
    readonly detection_curve: (a: number, b: number, c: number, d: bigint, e: number, f: number, g: number) => [number, number, number, number];
    readonly run_power_allocation: (a: number, b: number, c: number, d: number, e: bigint, f: number) => [number, number, number];
    readonly target_angle_deg: (a: number, b: number, c: bigint) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
