"""Deterministic generator for the bundled two-language sample corpus.

Produces source trees with the statistical structure the transfer
experiments need:

* two languages sharing a concept-word pool (so some subtokens transfer),
* per-language ide and commit partitions built from disjoint project-name
  pools (real distribution shift between authoring and version control),
* heavy in-file identifier reuse (copy patterns are learnable),
* receiver-method association (each api object owns its method set),
* a few per-file singleton names (out-of-vocabulary fodder).

Everything derives from one master seed; regenerating with the same seed is
byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .util import derive_seed

CONCEPTS = """
parse input buffer cache handler index token node list map value count reader
writer config query result stream batch user event log file path size hash key
data format client server request response queue stack tree graph text line
word char byte flag state mode type name next prev first last load save read
write open close init update delete create find get set add remove check merge
split filter sort group join wrap send recv encode decode build run start stop
reset clear flush render draw scan emit apply bind call test main util core
base item entry field row col cell page view model store task job worker pool
lock timer clock frame image color shape point rect edge vertex weight score
rank label limit total depth width slot chunk block span probe trace guard
""".split()

_STRINGS = ["ok", "error", "ready", "done", "empty", "miss", "hit", "stale",
            "retry", "skip"]

# A fixed "standard library" shared by every project in both languages:
# single lowercase words are style-invariant, so these names transfer
# across the commit/ide partitions and across languages.
STDLIB = ["parse", "format", "log", "emit", "check", "merge", "wrap", "probe",
          "flush", "render", "scan", "apply", "bind", "trace"]

FILES_PER_PROJECT = 55
IDE_PROJECTS = 8
COMMIT_PROJECTS = 8
COMMIT_FILES_PER_PROJECT = 10
# Within each ide project, the last files stand in for the coding sessions
# whose acceptances get logged; the rest are the snapshot corpus. Disjoint
# files, same projects, and many more session files than a small
# fine-tuning slice can cover: held-out events then genuinely reward
# corpus knowledge over memorized windows.
EVENT_FILES_PER_PROJECT = 25


def _pick(rng: np.random.Generator, pool):
    return pool[int(rng.integers(len(pool)))]


def _words(rng: np.random.Generator, n: int) -> list[str]:
    idx = rng.choice(len(CONCEPTS), size=n, replace=False)
    return [CONCEPTS[i] for i in idx]


def make_identifier(words: list[str], style: str) -> str:
    if style == "snake":
        return "_".join(words)
    return words[0] + "".join(w.capitalize() for w in words[1:])


class _NamePool:
    """Project-scoped identifier pools with receiver->method association."""

    def __init__(self, rng: np.random.Generator, style: str):
        self.style = style
        # shared stdlib plus a few project-local singles
        extras = [make_identifier([w], style) for w in _words(rng, 6)]
        self.globals = list(STDLIB) + [w for w in extras if w not in STDLIB]
        self.objects = [make_identifier(_words(rng, 2), style) for _ in range(10)]
        self.methods = {
            obj: [make_identifier(_words(rng, 2), style) for _ in range(6)]
            for obj in self.objects
        }
        self.functions = [make_identifier(_words(rng, 2), style) for _ in range(8)]


class _FileWriter:
    def __init__(self, style: str):
        self.style = style
        self.lines: list[str] = []

    def line(self, depth: int, text: str) -> None:
        self.lines.append("    " * depth + text)

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def _gen_function(rng: np.random.Generator, w: _FileWriter, pool: _NamePool,
                  fresh_names: list[str]) -> None:
    style = w.style
    fname = _pick(rng, pool.functions)
    params = [make_identifier([c], style) for c in _words(rng, 2)]
    locals_ = [make_identifier(_words(rng, 2), style) for _ in range(3)]

    def ref(rng) -> str:
        r = rng.random()
        if r < 0.45:
            return _pick(rng, locals_)
        if r < 0.65:
            return _pick(rng, params)
        return _pick(rng, pool.globals)

    def call(rng) -> str:
        r = rng.random()
        if r < 0.5:
            obj = _pick(rng, pool.objects)
            meth = _pick(rng, pool.methods[obj])
            return f"{obj}.{meth}({ref(rng)})"
        if r < 0.8:
            return f"{_pick(rng, pool.functions)}({ref(rng)}, {ref(rng)})"
        return f"{_pick(rng, STDLIB)}({ref(rng)})"

    def literal(rng) -> str:
        if rng.random() < 0.5:
            return str(int(rng.integers(0, 100)))
        return f'"{_pick(rng, _STRINGS)}"'

    def expr(rng) -> str:
        r = rng.random()
        if r < 0.4:
            return call(rng)
        if r < 0.7:
            return f"{ref(rng)} + {ref(rng)}"
        return literal(rng)

    if style == "snake":
        w.line(0, f"def {fname}({', '.join(params)}):")
        body_depth = 1
    else:
        w.line(0, f"function {fname}({', '.join(params)}) {{")
        body_depth = 1

    n_stmts = int(rng.integers(4, 9))
    declared = []
    for s in range(n_stmts):
        depth = body_depth
        kind = rng.random()
        target = locals_[s % len(locals_)]
        if kind < 0.30:
            if style == "snake":
                w.line(depth, f"{target} = {expr(rng)}")
            else:
                head = "let " if target not in declared else ""
                w.line(depth, f"{head}{target} = {expr(rng)};")
            declared.append(target)
        elif kind < 0.50:
            if style == "snake":
                w.line(depth, f"if {ref(rng)} == {literal(rng)}:")
                w.line(depth + 1, f"{target} = {call(rng)}")
            else:
                w.line(depth, f"if ({ref(rng)} == {literal(rng)}) {{")
                w.line(depth + 1, f"{target} = {call(rng)};")
                w.line(depth, "}")
            declared.append(target)
        elif kind < 0.65:
            loop = make_identifier([_pick(rng, ["i", "j", "k", "n"])], style)
            if style == "snake":
                w.line(depth, f"for {loop} in {ref(rng)}:")
                w.line(depth + 1, f"{target} = {target} + {call(rng)}")
            else:
                w.line(depth, f"for (let {loop} = 0; {loop} < {ref(rng)}; {loop} += 1) {{")
                w.line(depth + 1, f"{target} = {target} + {call(rng)};")
                w.line(depth, "}")
            declared.append(target)
        elif kind < 0.80:
            stmt = f"{call(rng)}"
            w.line(depth, stmt if style == "snake" else stmt + ";")
        elif kind < 0.90 and fresh_names:
            fresh = fresh_names.pop()
            if style == "snake":
                w.line(depth, f"{fresh} = {call(rng)}")
            else:
                w.line(depth, f"let {fresh} = {call(rng)};")
        else:
            ret = f"return {ref(rng)}"
            w.line(depth, ret if style == "snake" else ret + ";")
    tail = f"return {_pick(rng, locals_)}"
    w.line(body_depth, tail if style == "snake" else tail + ";")
    if style != "snake":
        w.line(0, "}")
    w.line(0, "")


def generate_file(style: str, pool: _NamePool, rng: np.random.Generator,
                  module_name: str) -> str:
    w = _FileWriter(style)
    comment = "#" if style == "snake" else "//"
    w.line(0, f"{comment} module {module_name}")
    imports = sorted({_pick(rng, pool.globals) for _ in range(3)})
    if style == "snake":
        w.line(0, f"from {module_name}_lib import {', '.join(imports)}")
    else:
        w.line(0, f'import {{ {", ".join(imports)} }} from "./{module_name}_lib";')
    w.line(0, "")
    n_fresh = int(rng.integers(1, 4))
    fresh = [make_identifier(_words(rng, 3), style) for _ in range(n_fresh)]
    for _ in range(int(rng.integers(3, 7))):
        _gen_function(rng, w, pool, fresh)
    return w.text()


def generate_tree(out_dir, seed: int = 7) -> dict[str, int]:
    """Write the full sample corpus; returns file counts per partition.

    Layout per language: ``ide/`` (snapshot corpus), ``events/`` (disjoint
    coding-session files the acceptance events are synthesized from, same
    projects as ide/), ``commit/`` (disjoint project partition).
    """
    out = Path(out_dir)
    counts: dict[str, int] = {}
    for language, style, ext in (("curly", "camel", "cy"), ("snake", "snake", "sn")):
        for partition, n_projects, n_files in (
                ("ide", IDE_PROJECTS, FILES_PER_PROJECT),
                ("commit", COMMIT_PROJECTS, COMMIT_FILES_PER_PROJECT)):
            n = {}
            for proj in range(n_projects):
                pool_rng = np.random.default_rng(
                    derive_seed(seed, language, partition, "pool", proj))
                pool = _NamePool(pool_rng, style)
                for fi in range(n_files):
                    rng = np.random.default_rng(
                        derive_seed(seed, language, partition, proj, fi))
                    name = f"{partition[0]}{proj}_mod{fi:02d}"
                    content = generate_file(style, pool, rng, name)
                    sub = partition
                    if partition == "ide" and \
                            fi >= n_files - EVENT_FILES_PER_PROJECT:
                        sub = "events"
                    part_dir = out / language / sub
                    part_dir.mkdir(parents=True, exist_ok=True)
                    (part_dir / f"{name}.{ext}").write_text(content, encoding="utf-8")
                    n[sub] = n.get(sub, 0) + 1
            for sub, count in n.items():
                counts[f"{language}/{sub}"] = count
    return counts
