/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_destination_rgba: (a: number) => [number, number];
export const demo_displace_rgba: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number, number];
export const demo_entropy_rgba: (a: number) => [number, number];
export const demo_new: (a: number, b: bigint) => [number, number, number];
export const demo_prediction_rgba: (a: number) => [number, number];
export const demo_region_count: (a: number) => number;
export const demo_size: (a: number) => number;
export const demo_source_rgba: (a: number) => [number, number];
export const demo_superpixels_rgba: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
