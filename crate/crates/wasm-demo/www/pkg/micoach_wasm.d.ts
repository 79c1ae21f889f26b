/* tslint:disable */
/* eslint-disable */

/**
 * A trainee session over the bundled curriculum, held in memory.
 */
export class DemoSession {
    free(): void;
    [Symbol.dispose](): void;
    choose(option_id: string): string;
    /**
     * `mode` is `roleplay`, `didactic` or `video`.
     */
    constructor(mode: string, first_name: string);
    /**
     * Events produced by starting the session.
     */
    opening(): string;
}

/**
 * Cronbach's alpha, ICC(C,k) and mean squares for a headerless CSV of
 * subjects × raters.
 */
export function reliability(csv: string): string;

/**
 * The bundled sample script, as a starting point for the editor.
 */
export function sample_script(): string;

/**
 * Parse and validate script source.
 */
export function validate_script(source: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demosession_free: (a: number, b: number) => void;
    readonly demosession_choose: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demosession_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly demosession_opening: (a: number) => [number, number];
    readonly reliability: (a: number, b: number) => [number, number];
    readonly sample_script: () => [number, number];
    readonly validate_script: (a: number, b: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
