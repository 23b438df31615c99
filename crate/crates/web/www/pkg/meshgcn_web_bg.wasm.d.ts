/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const __wbg_smoothoutput_free: (a: number, b: number) => void;
export const demo_compare: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
export const demo_new: (a: number, b: number, c: bigint, d: number) => [number, number, number];
export const demo_numModes: (a: number) => number;
export const demo_render: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_size: (a: number) => number;
export const demo_smooth: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
export const demo_vertexCount: (a: number) => number;
export const smoothoutput_report: (a: number) => [number, number];
export const smoothoutput_rgba: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
