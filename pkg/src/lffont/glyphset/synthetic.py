"""Procedural compositional script and "synthetic fonts".

Components are small stroke drawings; characters place one to three
components into the sub-boxes of a layout (left/right, top/bottom, ...).
A synthetic font is a JSON file holding global style parameters plus the
script itself, so it can be rasterized without any font engine.  Style is
partly local: every (font, component) pair gets its own width and bend
perturbation, which is the situation component-wise style features are
meant to capture.

Codepoints live in the Private Use Area: components at U+E000, composite
characters at U+E800.  A single-component character is the component itself.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

COMPONENT_BASE = 0xE000
CHARACTER_BASE = 0xE800
FONT_SUFFIX = ".synthfont.json"
FORMAT_TAG = "lffont-synthfont"

# sub-boxes (x0, y0, x1, y1) in unit coordinates, ratio r splits the first axis
LAYOUTS = {
    "single": lambda r: [(0.0, 0.0, 1.0, 1.0)],
    "lr": lambda r: [(0.0, 0.0, r, 1.0), (r, 0.0, 1.0, 1.0)],
    "tb": lambda r: [(0.0, 0.0, 1.0, r), (0.0, r, 1.0, 1.0)],
    "l_rr": lambda r: [(0.0, 0.0, r, 1.0), (r, 0.0, 1.0, 0.5), (r, 0.5, 1.0, 1.0)],
    "t_bb": lambda r: [(0.0, 0.0, 1.0, r), (0.0, r, 0.5, 1.0), (0.5, r, 1.0, 1.0)],
}
CAPS = ("round", "square", "serif", "taper")


@dataclass
class SynthStyle:
    name: str
    seed: int
    width: float = 0.06
    h_contrast: float = 1.0
    cap: str = "round"
    slant: float = 0.0
    bend: float = 0.0
    fill: float = 0.9
    local: float = 0.25

    @classmethod
    def random(cls, name: str, rng: np.random.Generator) -> "SynthStyle":
        return cls(
            name=name,
            seed=int(rng.integers(0, 2**31 - 1)),
            width=float(rng.uniform(0.035, 0.095)),
            h_contrast=float(rng.uniform(0.45, 1.0)),
            cap=str(rng.choice(CAPS)),
            slant=float(rng.uniform(-0.16, 0.16)),
            bend=float(rng.uniform(-0.06, 0.06)),
            fill=float(rng.uniform(0.72, 0.98)),
            local=float(rng.uniform(0.1, 0.4)),
        )


@dataclass
class SynthScript:
    components: dict[int, list[list[list[float]]]]
    characters: dict[int, dict] = field(default_factory=dict)

    def decomposition(self) -> dict[str, list[str]]:
        return {chr(cp): [chr(u) for u in entry["components"]] for cp, entry in self.characters.items()}

    def to_json(self) -> dict:
        return {
            "components": {str(k): v for k, v in self.components.items()},
            "characters": {str(k): v for k, v in self.characters.items()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "SynthScript":
        return cls(
            components={int(k): v for k, v in data["components"].items()},
            characters={int(k): v for k, v in data["characters"].items()},
        )


_GRID = (0.12, 0.3, 0.5, 0.7, 0.88)


def _random_stroke(rng: np.random.Generator) -> list[list[float]]:
    kind = rng.choice(["h", "v", "d", "dot", "hook"], p=[0.3, 0.3, 0.18, 0.1, 0.12])
    g = _GRID
    if kind == "h":
        y = g[rng.integers(5)]
        x0, x1 = sorted(rng.choice(5, size=2, replace=False))
        x0, x1 = g[x0], g[x1]
        return [[x0, y], [x1, y]]
    if kind == "v":
        x = g[rng.integers(5)]
        y0, y1 = sorted(rng.choice(5, size=2, replace=False))
        return [[x, g[y0]], [x, g[y1]]]
    if kind == "d":
        a, b = sorted(rng.choice(5, size=2, replace=False))
        if rng.random() < 0.5:
            return [[g[a], g[a]], [g[b], g[b]]]
        return [[g[4 - a], g[a]], [g[4 - b], g[b]]]
    if kind == "dot":
        x, y = g[rng.integers(5)], g[rng.integers(5)]
        return [[x - 0.06, y - 0.06], [x + 0.06, y + 0.06]]
    x0, x1 = sorted(rng.choice(5, size=2, replace=False))
    y0, y1 = sorted(rng.choice(5, size=2, replace=False))
    return [[g[x0], g[y0]], [g[x1], g[y0]], [g[x1], g[y1]]]


def _box() -> list[list[list[float]]]:
    a, b = 0.15, 0.85
    return [[[a, a], [b, a]], [[b, a], [b, b]], [[b, b], [a, b]], [[a, b], [a, a]]]


def _random_component(rng: np.random.Generator) -> list[list[list[float]]]:
    if rng.random() < 0.12:
        strokes = _box()
        if rng.random() < 0.5:
            strokes.append(_random_stroke(rng))
        return strokes
    return [_random_stroke(rng) for _ in range(int(rng.integers(2, 5)))]


def _component_key(strokes) -> tuple:
    return tuple(sorted(tuple(map(tuple, (map(lambda p: (round(p[0], 2), round(p[1], 2)), s)))) for s in strokes))


def make_script(n_components: int, n_characters: int, seed: int = 0) -> SynthScript:
    """Generate a compositional script.

    Every component is used by at least one character; component usage is
    long-tailed (Zipf-like), mirroring real decomposition statistics.
    """
    if n_characters < n_components:
        raise ValueError("need at least as many characters as components")
    rng = np.random.default_rng(seed)
    components: dict[int, list] = {}
    keys: set = set()
    while len(components) < n_components:
        strokes = _random_component(rng)
        key = _component_key(strokes)
        if key in keys:
            continue
        keys.add(key)
        components[COMPONENT_BASE + len(components)] = strokes

    comp_cps = list(components)
    characters: dict[int, dict] = {}
    # a handful of components stand alone as characters
    n_single = max(1, n_components // 4)
    for cp in comp_cps[:n_single]:
        characters[cp] = {"layout": "single", "ratio": 0.5, "components": [cp]}

    weights = 1.0 / np.arange(1, n_components + 1) ** 0.8
    weights /= weights.sum()
    multi_layouts = ["lr", "tb", "l_rr", "t_bb"]
    layout_p = np.array([0.35, 0.3, 0.175, 0.175])
    used: set = set()
    signatures: set = set()
    next_cp = CHARACTER_BASE
    pending = list(comp_cps[n_single:])  # guarantee every component is used
    while len(characters) < n_characters:
        layout = str(rng.choice(multi_layouts, p=layout_p))
        ratio = float(rng.choice([0.4, 0.5, 0.6]))
        m = len(LAYOUTS[layout](ratio))
        comps = [int(comp_cps[i]) for i in rng.choice(n_components, size=m, p=weights)]
        if pending:
            comps[int(rng.integers(m))] = pending.pop()
        sig = (layout, ratio, tuple(comps))
        if sig in signatures:
            continue
        signatures.add(sig)
        used.update(comps)
        characters[next_cp] = {"layout": layout, "ratio": ratio, "components": comps}
        next_cp += 1
    return SynthScript(components=components, characters=characters)


def make_styles(n_styles: int, seed: int = 0, prefix: str = "synth") -> list[SynthStyle]:
    rng = np.random.default_rng(seed + 7919)
    styles = [SynthStyle.random(f"{prefix}{i:03d}", rng) for i in range(n_styles)]
    # first style is a plain, regular source font
    styles[0] = SynthStyle(name=styles[0].name, seed=styles[0].seed, width=0.06, cap="round", local=0.0)
    return styles


def write_font(path: str | Path, style: SynthStyle, script: SynthScript, exclude=()) -> Path:
    path = Path(path)
    payload = {
        "format": FORMAT_TAG,
        "version": 1,
        "style": asdict(style),
        "script": script.to_json(),
        "exclude": sorted(int(c) for c in exclude),
    }
    path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
    return path


def write_corpus(out_dir: str | Path, n_styles: int, n_characters: int, n_components: int,
                 seed: int = 0, missing_rate: float = 0.0) -> tuple[Path, Path]:
    """Write `n_styles` synthetic fonts plus the matching decomposition TSV.

    Returns (font_dir, table_path).  `missing_rate` drops that fraction of
    characters from every font except the first (the source font).
    """
    out_dir = Path(out_dir)
    font_dir = out_dir / "fonts"
    font_dir.mkdir(parents=True, exist_ok=True)
    script = make_script(n_components, n_characters, seed)
    rng = np.random.default_rng(seed + 1)
    cps = sorted(script.characters)
    for i, style in enumerate(make_styles(n_styles, seed)):
        exclude = []
        if i > 0 and missing_rate > 0:
            exclude = [c for c in cps if rng.random() < missing_rate]
        write_font(font_dir / f"{style.name}{FONT_SUFFIX}", style, script, exclude)
    table_path = out_dir / "table.tsv"
    lines = [f"{ch}\t{','.join(comps)}\n" for ch, comps in sorted(script.decomposition().items())]
    table_path.write_text("".join(lines), encoding="utf-8")
    return font_dir, table_path


class SynthFont:
    """A loaded synthetic font; `render` returns an 8-bit grayscale array (255 = background)."""

    def __init__(self, style: SynthStyle, script: SynthScript, exclude=()):
        self.style = style
        self.script = script
        self.exclude = frozenset(exclude)
        self.name = style.name

    @classmethod
    def load(cls, path: str | Path) -> "SynthFont":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("format") != FORMAT_TAG:
            raise ValueError(f"{path} is not a synthetic font file")
        return cls(SynthStyle(**data["style"]), SynthScript.from_json(data["script"]), data.get("exclude", ()))

    def has(self, codepoint: int) -> bool:
        return codepoint in self.script.characters and codepoint not in self.exclude

    def codepoints(self) -> list[int]:
        return sorted(c for c in self.script.characters if c not in self.exclude)

    def _local(self, comp_cp: int) -> tuple[float, float, np.random.Generator]:
        rng = np.random.default_rng(zlib.crc32(f"{self.style.seed}:{comp_cp}".encode()))
        loc = self.style.local
        width_mul = float(np.exp(rng.uniform(-loc, loc)))
        bend = self.style.bend + float(rng.uniform(-loc, loc)) * 0.08
        return width_mul, bend, rng

    def render(self, codepoint: int, resolution: int, supersample: int = 4) -> np.ndarray:
        if not self.has(codepoint):
            raise KeyError(codepoint)
        entry = self.script.characters[codepoint]
        boxes = LAYOUTS[entry["layout"]](entry["ratio"])
        size = resolution * supersample
        img = Image.new("L", (size, size), 255)
        draw = ImageDraw.Draw(img)
        st = self.style
        margin = 0.1
        span = 1.0 - 2 * margin

        def to_px(x: float, y: float) -> tuple[float, float]:
            # shear around the vertical center for slant
            x = x + st.slant * (0.5 - y)
            return ((margin + span * x) * size, (margin + span * y) * size)

        for (x0, y0, x1, y1), comp in zip(boxes, entry["components"]):
            width_mul, bend, rng = self._local(comp)
            pad = 0.04 + (1.0 - st.fill) * 0.25
            bx0, by0 = x0 + pad * (x1 - x0), y0 + pad * (y1 - y0)
            bw, bh = (x1 - x0) * (1 - 2 * pad), (y1 - y0) * (1 - 2 * pad)
            for stroke in self.script.components[comp]:
                pts = np.asarray(stroke, dtype=float)
                pts = pts + rng.uniform(-0.03, 0.03, size=pts.shape) * st.local
                pts = _bend(pts, bend)
                pts = np.column_stack([bx0 + pts[:, 0] * bw, by0 + pts[:, 1] * bh])
                d = pts[-1] - pts[0]
                horizontal = abs(d[0]) > 2 * abs(d[1])
                w = st.width * width_mul * (st.h_contrast if horizontal else 1.0)
                _draw_stroke(draw, [to_px(*p) for p in pts], max(1.0, w * span * size), st.cap)
        img = img.resize((resolution, resolution), Image.Resampling.BOX)
        return np.asarray(img, dtype=np.uint8)


def _bend(pts: np.ndarray, amount: float, n: int = 6) -> np.ndarray:
    """Bow every segment sideways by `amount` (relative to its length)."""
    if abs(amount) < 1e-9:
        return pts
    out = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        d = b - a
        normal = np.array([-d[1], d[0]])
        for t in np.linspace(0, 1, n + 1)[1:]:
            out.append(a + t * d + normal * amount * 4 * t * (1 - t))
    return np.asarray(out)


def _draw_stroke(draw: ImageDraw.ImageDraw, pts: list[tuple[float, float]], width: float, cap: str) -> None:
    w = int(round(width))
    r = width / 2
    if cap == "taper":
        n = len(pts) - 1
        for i, (a, b) in enumerate(zip(pts[:-1], pts[1:])):
            frac = 1.0 - 0.6 * (i + 0.5) / n
            draw.line([a, b], fill=0, width=max(1, int(round(width * frac))))
            rr = width * frac / 2
            draw.ellipse([b[0] - rr, b[1] - rr, b[0] + rr, b[1] + rr], fill=0)
        a = pts[0]
        draw.ellipse([a[0] - r, a[1] - r, a[0] + r, a[1] + r], fill=0)
        return
    if cap == "square":
        p = np.asarray(pts, dtype=float)
        for idx, nb in ((0, 1), (-1, -2)):
            d = p[idx] - p[nb]
            norm = np.hypot(*d)
            if norm > 0:
                p[idx] = p[idx] + d / norm * r
        pts = [tuple(q) for q in p]
    draw.line(pts, fill=0, width=max(1, w), joint="curve")
    for x, y in pts[1:-1]:
        draw.ellipse([x - r, y - r, x + r, y + r], fill=0)
    if cap in ("round", "serif"):
        for x, y in (pts[0], pts[-1]):
            draw.ellipse([x - r, y - r, x + r, y + r], fill=0)
    if cap == "serif":
        x, y = pts[-1]
        s = width * 0.9
        draw.polygon([(x - r, y - r), (x + r + s, y - r - s), (x + r, y + r)], fill=0)
