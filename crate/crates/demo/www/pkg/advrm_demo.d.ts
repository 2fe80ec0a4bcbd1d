/* tslint:disable */
/* eslint-disable */

export class DemoWorld {
    free(): void;
    [Symbol.dispose](): void;
    constructor(seed: bigint);
    prompt(id: number): Uint16Array;
    prompt_count(): number;
    /**
     * A fresh demonstration-style response, as space-separated token ids.
     */
    sample_response(): string;
    /**
     * Raw gold score and its terms as JSON.
     */
    score(prompt_id: number, tokens: string): string;
    vocab(): number;
}

/**
 * Attack reward for normalized scores, plus whether a sample with
 * disagreement z-score `z` would pass the filter.
 */
export function attack_reward(r1: number, r2: number, threshold: number, lambda: number, penalty: number, constrained: boolean, z: number): string;

/**
 * Leave-one-out advantages of one prompt's sampled rewards.
 */
export function rloo(rewards: Float64Array): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demoworld_free: (a: number, b: number) => void;
    readonly attack_reward: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number];
    readonly demoworld_new: (a: bigint) => [number, number, number];
    readonly demoworld_prompt: (a: number, b: number) => [number, number];
    readonly demoworld_prompt_count: (a: number) => number;
    readonly demoworld_sample_response: (a: number) => [number, number];
    readonly demoworld_score: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demoworld_vocab: (a: number) => number;
    readonly rloo: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
