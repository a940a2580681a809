/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_heatmap_free: (a: number, b: number) => void;
export const __wbg_rocdemo_free: (a: number, b: number) => void;
export const arcfaceCurve: (a: number, b: number, c: number) => [number, number];
export const heatmap_cols: (a: number) => number;
export const heatmap_data: (a: number) => [number, number];
export const heatmap_rows: (a: number) => number;
export const humLogMel: (a: number, b: number, c: number) => [number, number, number];
export const rocDemo: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number];
export const rocdemo_auc: (a: number) => number;
export const rocdemo_fpr: (a: number) => [number, number];
export const rocdemo_pauc: (a: number) => number;
export const rocdemo_tpr: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
