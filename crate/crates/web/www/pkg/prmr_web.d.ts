/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Keep `views` spokes and reconstruct them with FBP.
     */
    fbp(views: number): Uint8Array;
    fullViews(): number;
    /**
     * `family` is one of shepp-logan, abdomen, brain, brain-variant.
     */
    constructor(family: string, size: number, seed: bigint, slice: number, noise: number);
    /**
     * NMSE of the last reconstruction against the reference.
     */
    nmse(): number;
    phantom(): Uint8Array;
    /**
     * FBP of the fully sampled scan, the reference the errors are against.
     */
    reference(): Uint8Array;
    size(): number;
    /**
     * TV-regularized reconstruction of the spokes kept by the last
     * [`Demo::fbp`] call.
     */
    tv(lambda: number, iterations: number): Uint8Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_fbp: (a: number, b: number) => [number, number, number, number];
    readonly demo_fullViews: (a: number) => number;
    readonly demo_new: (a: number, b: number, c: number, d: bigint, e: number, f: number) => [number, number, number];
    readonly demo_nmse: (a: number) => number;
    readonly demo_phantom: (a: number) => [number, number];
    readonly demo_reference: (a: number) => [number, number];
    readonly demo_size: (a: number) => number;
    readonly demo_tv: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
