/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demoworld_free: (a: number, b: number) => void;
export const attack_reward: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number];
export const demoworld_new: (a: bigint) => [number, number, number];
export const demoworld_prompt: (a: number, b: number) => [number, number];
export const demoworld_prompt_count: (a: number) => number;
export const demoworld_sample_response: (a: number) => [number, number];
export const demoworld_score: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demoworld_vocab: (a: number) => number;
export const rloo: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
