// Export self-containment. The rendered report must be viewable with no
// network: every src/href/url() in it has to be inline (data: URIs,
// fragments) rather than something a browser would fetch after load.

const ATTR_RE = /\b(src|href|srcset)\s*=\s*("([^"]*)"|'([^']*)')/gi;
const CSS_URL_RE = /url\(\s*(?:"([^"]*)"|'([^']*)'|([^)"']+))\s*\)/gi;

function wouldFetch(ref: string): boolean {
  const value = ref.trim();
  if (value === "") return false;
  if (value.startsWith("#")) return false;
  if (value.startsWith("data:")) return false;
  if (value.startsWith("about:")) return false;
  if (value.startsWith("mailto:")) return false;
  if (value.startsWith("javascript:")) return false;
  // http:, https:, protocol-relative, or any relative path all hit the
  // network once the document is opened on its own.
  return true;
}

// Every reference in the HTML that a browser would try to load.
export function externalReferences(html: string): string[] {
  const refs: string[] = [];
  for (const m of html.matchAll(ATTR_RE)) {
    const attr = (m[1] ?? "").toLowerCase();
    const value = m[3] ?? m[4] ?? "";
    if (attr === "srcset") {
      // comma-separated candidates, each URL followed by a descriptor;
      // src/href must not be split: data: URIs carry commas themselves
      for (const part of value.split(",")) {
        const url = part.trim().split(/\s+/)[0] ?? "";
        if (wouldFetch(url)) refs.push(url);
      }
    } else {
      const url = value.trim();
      if (wouldFetch(url)) refs.push(url);
    }
  }
  for (const m of html.matchAll(CSS_URL_RE)) {
    const url = (m[1] ?? m[2] ?? m[3] ?? "").trim();
    if (wouldFetch(url)) refs.push(url);
  }
  return refs;
}

export function isSelfContained(html: string): boolean {
  return externalReferences(html).length === 0;
}
