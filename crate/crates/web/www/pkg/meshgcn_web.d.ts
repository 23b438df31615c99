/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * JSON report of face `a` against a rotated, shifted copy of face `b`.
     */
    compare(a: Float64Array, b: Float64Array, degrees: number, shift: number, margin: number): string;
    constructor(subdivisions: number, num_modes: number, seed: bigint, size: number);
    /**
     * RGBA pixels of the face with the given mode coefficients.
     */
    render(coefficients: Float64Array, depth: boolean): Uint8Array;
    /**
     * RGBA pixels of the smoothed noisy face; the errors go to `report`
     * as JSON.
     */
    smooth(coefficients: Float64Array, sigma: number, order: number, tau: number, seed: bigint): SmoothOutput;
    readonly numModes: number;
    readonly size: number;
    readonly vertexCount: number;
}

export class SmoothOutput {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly report: string;
    readonly rgba: Uint8Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly __wbg_smoothoutput_free: (a: number, b: number) => void;
    readonly demo_compare: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number, c: bigint, d: number) => [number, number, number];
    readonly demo_numModes: (a: number) => number;
    readonly demo_render: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_size: (a: number) => number;
    readonly demo_smooth: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
    readonly demo_vertexCount: (a: number) => number;
    readonly smoothoutput_report: (a: number) => [number, number];
    readonly smoothoutput_rgba: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
