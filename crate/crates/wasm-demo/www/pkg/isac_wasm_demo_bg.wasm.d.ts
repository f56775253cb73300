/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_aorun_free: (a: number, b: number) => void;
export const aorun_data: (a: number) => [number, number];
export const aorun_feasible: (a: number) => number;
export const aorun_objectives: (a: number) => [number, number];
export const aorun_pilot: (a: number) => [number, number];
export const beampattern: (a: number, b: number, c: number, d: number, e: bigint, f: number) => [number, number, number, number];
export const detection_curve: (a: number, b: number, c: number, d: bigint, e: number, f: number, g: number) => [number, number, number, number];
export const run_power_allocation: (a: number, b: number, c: number, d: number, e: bigint, f: number) => [number, number, number];
export const target_angle_deg: (a: number, b: number, c: bigint) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
