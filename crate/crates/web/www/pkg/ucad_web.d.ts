/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    destination_rgba(): Uint8Array;
    /**
     * Pastes `regions` source superpixels into the destination and returns
     * the mixed image with the pasted area outlined in cyan. With
     * `uncertainty` off, regions are chosen uniformly.
     */
    displace_rgba(k_target: number, compactness: number, temperature: number, regions: number, uncertainty: boolean, seed: bigint): Uint8Array;
    /**
     * Teacher entropy on the source, black (certain) to yellow (uncertain),
     * scaled so `ln C` is full brightness.
     */
    entropy_rgba(): Uint8Array;
    /**
     * Draws a labeled source and an unlabeled destination image of
     * `size`×`size` pixels, then fits the teacher on the source.
     */
    constructor(size: number, seed: bigint);
    /**
     * Teacher prediction on the source, one gray level per class.
     */
    prediction_rgba(): Uint8Array;
    /**
     * Number of regions in the most recent partition.
     */
    region_count(): number;
    size(): number;
    source_rgba(): Uint8Array;
    /**
     * Source image with the SLIC boundaries for these settings in red.
     */
    superpixels_rgba(k_target: number, compactness: number): Uint8Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_destination_rgba: (a: number) => [number, number];
    readonly demo_displace_rgba: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number, number];
    readonly demo_entropy_rgba: (a: number) => [number, number];
    readonly demo_new: (a: number, b: bigint) => [number, number, number];
    readonly demo_prediction_rgba: (a: number) => [number, number];
    readonly demo_region_count: (a: number) => number;
    readonly demo_size: (a: number) => number;
    readonly demo_source_rgba: (a: number) => [number, number];
    readonly demo_superpixels_rgba: (a: number, b: number, c: number) => [number, number, number, number];
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
