/** Uploaded-instance list. */

import { shortId } from "../format.js";

export function instanceList(instances: string[]): string {
  if (instances.length === 0) {
    return `<div class="instances-empty">no instances uploaded</div>`;
  }
  const items = instances
    .map((id) => `<li class="mono" data-instance="${id}">${shortId(id)}</li>`)
    .join("");
  return `<ul class="instance-list">${items}</ul>`;
}
