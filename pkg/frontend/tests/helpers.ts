/** Shared helpers for rendering components to markup and reading back the
 *  payload values they claim to display. */
import { renderToStaticMarkup } from "react-dom/server";
import type { ReactElement } from "react";

export function render(element: ReactElement): Document {
  const markup = renderToStaticMarkup(element);
  return new DOMParser().parseFromString(`<body>${markup}</body>`, "text/html");
}

export interface RenderedNum {
  raw: string;
  text: string;
}

/** Every figure rendered through <Num>, keyed by its payload label. */
export function renderedNums(doc: Document): Map<string, RenderedNum> {
  const out = new Map<string, RenderedNum>();
  doc.querySelectorAll("span.num[data-label]").forEach((el) => {
    out.set(el.getAttribute("data-label")!, {
      raw: el.getAttribute("data-value") ?? "",
      text: el.textContent ?? "",
    });
  });
  return out;
}

/** Assert helper: the rendered figure for `label` is exactly `value`. */
export function expectNum(nums: Map<string, RenderedNum>, label: string, value: number) {
  const entry = nums.get(label);
  if (entry === undefined) throw new Error(`no rendered number labeled ${label}`);
  if (Number(entry.raw) !== value) {
    throw new Error(`${label}: rendered raw ${entry.raw} != payload ${value}`);
  }
}
