"""Binary cache: publish, verified fetch, and cross-provider challenge.

There are no signatures anywhere.  Integrity rests on content hashes: every
archive fetched from a cache is re-hashed before registration, and the
challenge operation compares hashes across independent providers (and
optionally a fresh local rebuild) instead of trusting any of them.

Cache layout: <cache>/info/<digest_prefix> ("key: value" lines, keys
sorted) and <cache>/carc/<digest_prefix> (raw CARC bytes).
"""

from __future__ import annotations

import logging
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from . import carc, transport
from .errors import (AllProvidersCorrupt, CacheWriteError, CorruptItem,
                     MicrofoldError, SubstituteNotFound)
from .hashing import ContentHash
from .store import Store, StorePath

log = logging.getLogger(__name__)


@dataclass
class SubstituteInfo:
    store_path: str  # final path component
    output_hash: ContentHash
    archive_size: int
    references: list = field(default_factory=list)  # sorted components
    deriver: ContentHash | None = None

    def render(self) -> str:
        fields = {
            "outputhash": self.output_hash.hex,
            "references": " ".join(self.references),
            "size": str(self.archive_size),
            "storepath": self.store_path,
        }
        if self.deriver is not None:
            fields["deriver"] = self.deriver.hex
        return "".join(f"{k}: {v}\n" for k, v in sorted(fields.items()))

    @classmethod
    def parse(cls, text: str) -> "SubstituteInfo":
        fields = {}
        for line in text.splitlines():
            key, _, value = line.partition(": ")
            fields[key] = value
        return cls(
            store_path=fields["storepath"],
            output_hash=ContentHash(fields["outputhash"]),
            archive_size=int(fields["size"]),
            references=[c for c in fields.get("references", "").split() if c],
            deriver=ContentHash(fields["deriver"]) if "deriver" in fields else None,
        )


def publish(store: Store, path: StorePath, cache) -> SubstituteInfo:
    """Write a verified store item into a local cache directory."""
    report = store.verify_item(path)
    if not report.ok:
        raise CorruptItem(f"{path.component}: {report.status}")
    rec = store.get_record(path)
    data = carc.serialize_path(path.path)
    info = SubstituteInfo(
        store_path=path.component,
        output_hash=rec.output_hash,
        archive_size=len(data),
        references=[r.component for r in rec.references],
        deriver=rec.deriver,
    )
    try:
        cache = Path(cache)
        (cache / "info").mkdir(parents=True, exist_ok=True)
        (cache / "carc").mkdir(parents=True, exist_ok=True)
        (cache / "carc" / path.digest_prefix).write_bytes(data)
        (cache / "info" / path.digest_prefix).write_text(info.render())
    except OSError as e:
        raise CacheWriteError(str(e)) from e
    return info


def _provider_lookup(cache, digest_prefix: str):
    """(info, carc_bytes) from one provider; either may be None."""
    info_text = transport.read_bytes(cache, f"info/{digest_prefix}")
    data = transport.read_bytes(cache, f"carc/{digest_prefix}")
    info = SubstituteInfo.parse(info_text.decode()) if info_text else None
    return info, data


def fetch_substitute(path: StorePath, caches, store: Store,
                     *, _seen=None) -> StorePath:
    """Install a pre-built item from the first cache that serves it honestly.

    The served archive is re-hashed before registration; a mismatching
    provider is skipped with a warning and the next one is tried.  The
    item's references are fetched first so the store never dangles.
    """
    if store.get_record(path) is not None:
        return path
    _seen = _seen if _seen is not None else set()
    if path.component in _seen:
        raise SubstituteNotFound(f"reference cycle at {path.component}")
    _seen.add(path.component)

    found = corrupt = False
    for cache in caches:
        info, data = _provider_lookup(cache, path.digest_prefix)
        if info is None or data is None:
            continue
        found = True
        actual = ContentHash.of_bytes(data)
        if actual != info.output_hash or info.store_path != path.component:
            log.warning("cache %s serves corrupt archive for %s "
                        "(expected %s, got %s); skipping",
                        cache, path.component, info.output_hash, actual)
            corrupt = True
            continue
        try:
            refs = []
            for comp in info.references:
                if comp == path.component:
                    continue
                ref_path = StorePath.from_component(store.root, comp)
                if store.get_record(ref_path) is None:
                    fetch_substitute(ref_path, caches, store, _seen=_seen)
                refs.append(ref_path)
        except MicrofoldError as e:
            log.warning("cache %s: reference of %s unavailable (%s); skipping",
                        cache, path.component, e)
            continue
        store.register_output(carc.parse(data), path,
                              deriver=info.deriver, references=refs)
        if info.deriver is None:
            # No deriver: demote the record kind to fixed.
            rec = store.get_record(path)
            rec.kind = "fixed"
            store._write_record(rec)
        return path

    if found and corrupt:
        raise AllProvidersCorrupt(path.component)
    raise SubstituteNotFound(path.component)


@dataclass
class ChallengeEntry:
    verdict: str  # agree | disagree | unknown
    values: list  # (provider, hash-hex) pairs, provider order preserved

    @property
    def distinct(self):
        return sorted({h for _, h in self.values})


@dataclass
class ChallengeReport:
    entries: dict  # component -> ChallengeEntry

    @property
    def ok(self):
        return all(e.verdict != "disagree" for e in self.entries.values())

    def render(self) -> str:
        lines = []
        for comp in sorted(self.entries):
            entry = self.entries[comp]
            lines.append(f"{comp}: {entry.verdict}")
            for provider, h in entry.values:
                lines.append(f"  {provider}: {h}")
            if entry.verdict == "disagree":
                lines.append(f"  {len(entry.distinct)} distinct hashes")
        return "\n".join(lines) + "\n"


def challenge(paths, caches, store: Store, *, rebuild: bool = False,
              derivations=None, archive=None) -> ChallengeReport:
    """Compare output hashes across providers without installing anything.

    Providers are the local store record, every cache (archives re-hashed,
    so a tampered archive shows up as a divergent value), and optionally a
    fresh rebuild in a scratch store.  Unreachable providers simply do not
    contribute a value.
    """
    from .builder import build, _clone_trust_roots

    entries = {}
    for path in paths:
        values = []
        rec = store.get_record(path)
        if rec is not None:
            values.append(("local", rec.output_hash.hex))
        for cache in caches:
            info, data = _provider_lookup(cache, path.digest_prefix)
            if data is not None:
                values.append((str(cache), ContentHash.of_bytes(data).hex))
            elif info is not None:
                values.append((str(cache), info.output_hash.hex))
        if rebuild and derivations and path.component in derivations:
            scratch_root = tempfile.mkdtemp(prefix="microfold-challenge-")
            try:
                scratch = Store(scratch_root)
                _clone_trust_roots(store, scratch)
                built = build(derivations[path.component], scratch,
                              archive=archive)
                values.append(("rebuild",
                               scratch.get_record(built).output_hash.hex))
            finally:
                shutil.rmtree(scratch_root, ignore_errors=True)
        distinct = {h for _, h in values}
        if len(values) >= 2 and len(distinct) == 1:
            verdict = "agree"
        elif len(distinct) > 1:
            verdict = "disagree"
        else:
            verdict = "unknown"
        entries[path.component] = ChallengeEntry(verdict, values)
    return ChallengeReport(entries)
