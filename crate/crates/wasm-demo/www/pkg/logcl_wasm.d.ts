/* tslint:disable */
/* eslint-disable */
export function sample_subgraph(history: string, queries: string): string;
export function supcon_vs_tau(seed: number, batch: number, noise: number, taus: Float64Array): string;
/**
 * Incremental trainer over the repetition dataset.
 */
export class Trainer {
  free(): void;
  constructor(dim: number, window: number, lr: number, seed: number);
  /**
   * Trains one epoch and returns JSON with the losses and current MRRs.
   */
  epoch(): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
  readonly memory: WebAssembly.Memory;
  readonly __wbg_trainer_free: (a: number, b: number) => void;
  readonly sample_subgraph: (a: number, b: number, c: number, d: number) => [number, number, number, number];
  readonly supcon_vs_tau: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
  readonly trainer_epoch: (a: number) => [number, number, number, number];
  readonly trainer_new: (a: number, b: number, c: number, d: number) => [number, number, number];
  readonly __wbindgen_export_0: WebAssembly.Table;
  readonly __wbindgen_malloc: (a: number, b: number) => number;
  readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
  readonly __externref_table_dealloc: (a: number) => void;
  readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
