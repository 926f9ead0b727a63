"""Small shared helpers: stable hashing, seed derivation, template rendering."""

from __future__ import annotations

import hashlib
import re

_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")


def stable_digest(*parts: str) -> str:
    """SHA-256 hex digest of the parts joined with a separator.

    Stable across runs and platforms; used for prompt hashes and cache keys.
    """
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()


def derive_seed(master_seed: int, *labels: str) -> int:
    """Derive a per-purpose seed from a master seed and a label path.

    Keeps independently seeded stages (split, sampling, A/B flips)
    reproducible from one configured seed.
    """
    digest = stable_digest(str(master_seed), *labels)
    return int(digest[:16], 16)


def render_template(template: str, values: dict[str, str]) -> str:
    """Substitute ``{{name}}`` placeholders in a template.

    Raises:
        KeyError: a placeholder has no value (unused values are fine).
    """
    def repl(match: re.Match[str]) -> str:
        name = match.group(1)
        if name not in values:
            raise KeyError(f"template placeholder without a value: {name}")
        return values[name]

    return _PLACEHOLDER.sub(repl, template)


def slugify(text: str) -> str:
    """Filesystem-safe slug: lowercase, alphanumerics and hyphens only."""
    slug = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
    return slug or "item"
