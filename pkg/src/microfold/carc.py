"""CARC: bit-exact canonical serialization of file trees.

The archive is the basis of every output hash.  It captures file contents,
entry names, the executable bit and symlink targets -- and deliberately
nothing else (no timestamps, no ownership, no traversal order).

Grammar:

    archive := "carc1\\n" node
    node    := ("f\\n" | "x\\n") <size> "\\n" <bytes>     regular file (x = exec)
             | "l\\n" <size> "\\n" <target-bytes>         symlink
             | "d\\n" <count> "\\n" entry*                directory
    entry   := <name-length> "\\n" <name-bytes> node

Directory entries are sorted ascending by raw name bytes; sizes and counts
are ASCII decimals.
"""

from __future__ import annotations

import os
import stat
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidName, ParseError, UnsupportedNode
from .hashing import ContentHash

MAGIC = b"carc1\n"


# In-memory tree model, used by tests and by archive restoration.

@dataclass
class File:
    data: bytes
    executable: bool = False


@dataclass
class Symlink:
    target: str


@dataclass
class Dir:
    entries: dict = field(default_factory=dict)  # name -> File|Symlink|Dir


Node = object  # File | Symlink | Dir


def _check_name(name: bytes):
    if not name or b"/" in name or b"\x00" in name:
        raise InvalidName(f"bad entry name: {name!r}")


def _serialize_node(node) -> bytes:
    if isinstance(node, File):
        tag = b"x\n" if node.executable else b"f\n"
        return tag + str(len(node.data)).encode() + b"\n" + node.data
    if isinstance(node, Symlink):
        target = node.target.encode()
        return b"l\n" + str(len(target)).encode() + b"\n" + target
    if isinstance(node, Dir):
        out = [b"d\n", str(len(node.entries)).encode(), b"\n"]
        for name in sorted(node.entries, key=lambda n: n.encode()):
            raw = name.encode()
            _check_name(raw)
            out.append(str(len(raw)).encode() + b"\n" + raw)
            out.append(_serialize_node(node.entries[name]))
        return b"".join(out)
    raise UnsupportedNode(f"not a tree node: {node!r}")


def serialize_tree(node) -> bytes:
    """Serialize an in-memory tree to CARC bytes."""
    return MAGIC + _serialize_node(node)


def serialize_bytes(data: bytes, executable: bool = False) -> bytes:
    """Serialize raw bytes as a single-file archive."""
    return serialize_tree(File(data, executable))


def load_tree(path: os.PathLike) -> Node:
    """Read a filesystem tree into the in-memory model."""
    p = Path(path)
    st = p.lstat()
    mode = st.st_mode
    if stat.S_ISLNK(mode):
        return Symlink(os.readlink(p))
    if stat.S_ISREG(mode):
        return File(p.read_bytes(), executable=bool(mode & stat.S_IXUSR))
    if stat.S_ISDIR(mode):
        d = Dir()
        for child in p.iterdir():
            raw = child.name.encode()
            _check_name(raw)
            d.entries[child.name] = load_tree(child)
        return d
    raise UnsupportedNode(f"{p}: unsupported file type")


def serialize_path(path: os.PathLike) -> bytes:
    """Serialize a filesystem tree (file, directory, or symlink) to CARC."""
    return serialize_tree(load_tree(path))


def hash_tree(node) -> ContentHash:
    return ContentHash.of_bytes(serialize_tree(node))


def hash_path(path: os.PathLike) -> ContentHash:
    return ContentHash.of_bytes(serialize_path(path))


# Deserialization, used when unpacking substitutes and archived sources.

class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError("truncated archive", position=self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def line(self) -> bytes:
        nl = self.data.find(b"\n", self.pos)
        if nl < 0:
            raise ParseError("truncated archive", position=self.pos)
        chunk = self.data[self.pos:nl]
        self.pos = nl + 1
        return chunk

    def number(self) -> int:
        raw = self.line()
        if not raw.isdigit():
            raise ParseError(f"expected decimal, got {raw!r}", position=self.pos)
        return int(raw)


def _parse_node(r: _Reader):
    tag = r.take(2)
    if tag in (b"f\n", b"x\n"):
        size = r.number()
        return File(r.take(size), executable=tag == b"x\n")
    if tag == b"l\n":
        size = r.number()
        return Symlink(r.take(size).decode())
    if tag == b"d\n":
        count = r.number()
        d = Dir()
        prev = None
        for _ in range(count):
            name = r.take(r.number())
            _check_name(name)
            if prev is not None and name <= prev:
                raise ParseError(f"entries out of order: {name!r}", position=r.pos)
            prev = name
            d.entries[name.decode()] = _parse_node(r)
        return d
    raise ParseError(f"unknown node tag {tag!r}", position=r.pos)


def parse(data: bytes) -> Node:
    """Parse CARC bytes back into the in-memory tree model."""
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise ParseError("bad archive magic")
    node = _parse_node(r)
    if r.pos != len(data):
        raise ParseError("trailing garbage after archive", position=r.pos)
    return node


def write_tree(node, dest: os.PathLike):
    """Materialize an in-memory tree at dest (which must not exist)."""
    dest = Path(dest)
    if isinstance(node, File):
        dest.write_bytes(node.data)
        if node.executable:
            dest.chmod(dest.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    elif isinstance(node, Symlink):
        os.symlink(node.target, dest)
    elif isinstance(node, Dir):
        dest.mkdir()
        for name, child in node.entries.items():
            write_tree(child, dest / name)
    else:
        raise UnsupportedNode(f"not a tree node: {node!r}")


def restore(data: bytes, dest: os.PathLike):
    """Unpack CARC bytes to the filesystem at dest."""
    write_tree(parse(data), dest)
