/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_trainer_free: (a: number, b: number) => void;
export const sample_subgraph: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const supcon_vs_tau: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const trainer_epoch: (a: number) => [number, number, number, number];
export const trainer_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const __wbindgen_export_0: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
