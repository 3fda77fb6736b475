/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_annotations: (a: number) => [number, number];
export const demo_curves: (a: number) => [number, number, number, number];
export const demo_duration: (a: number) => number;
export const demo_endpoint: (a: number, b: number) => [number, number, number, number];
export const demo_new: (a: number, b: number) => [number, number, number];
export const demo_probabilities: (a: number) => [number, number];
export const demo_spectrogram: (a: number) => [number, number];
export const demo_spectrogram_bins: (a: number) => number;
export const demo_spectrogram_frames: (a: number) => number;
export const demo_track_start: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
