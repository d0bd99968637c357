"""Dump per-glyph reference data for WordartTestSans.ttf using fontTools.

Regenerate with: python3 dump_reference.py > reference_dump.json
"""
import json
from fontTools.ttLib import TTFont
from fontTools.pens.recordingPen import DecomposingRecordingPen
from fontTools.pens.areaPen import AreaPen
from fontTools.pens.boundsPen import ControlBoundsPen

font = TTFont("WordartTestSans.ttf")
glyphs = font.getGlyphSet()
cmap = font.getBestCmap()
out = {"units_per_em": font["head"].unitsPerEm, "glyphs": {}}
for cp in sorted(cmap):
    name = cmap[cp]
    rec = DecomposingRecordingPen(glyphs)
    glyphs[name].draw(rec)
    contours, cur = [], []
    for op, args in rec.value:
        cur.append((op, args))
        if op in ("closePath", "endPath"):
            contours.append(cur)
            cur = []
    areas = []
    for c in contours:
        pen = AreaPen(glyphs)
        for op, args in c:
            getattr(pen, op)(*args)
        areas.append(pen.value)
    bp = ControlBoundsPen(glyphs)
    glyphs[name].draw(bp)
    out["glyphs"][chr(cp)] = {
        "codepoint": cp,
        "advance": font["hmtx"][name][0],
        "contour_areas": areas,
        "control_bounds": list(bp.bounds) if bp.bounds else None,
        "composite": font["glyf"][name].isComposite(),
    }
print(json.dumps(out, indent=1, ensure_ascii=False))
