"""Regenerate the golden ``align`` fixture from a synthetic pair.

Run from the repository root: ``python tests/fixtures/make_align_fixture.py``.
"""
import json
from pathlib import Path

from bevloc.cli import main
from bevloc.raster import save_image
from bevloc.synth import SceneSpec, TrialSpec, make_overhead, make_pair

HERE = Path(__file__).parent / "align"


def build():
    HERE.mkdir(exist_ok=True)
    trial = TrialSpec(scene=SceneSpec(seed=3, size=256), perturbation=3.0)
    pair = make_pair(make_overhead(trial.scene), trial)
    save_image(pair.bev, HERE / "bev.png")
    save_image(pair.sat, HERE / "sat.png")
    m = pair.gt.meta
    (HERE / "labels.csv").write_text(
        "image_id,lat,lon,center_lat,center_lon,zoom,size\n"
        f"seed3,{pair.gt.lat!r},{pair.gt.lon!r},{m.center_lat!r},{m.center_lon!r},{m.zoom},{m.size:g}\n")
    (HERE / "gt.json").write_text(json.dumps({"homography": pair.gt.h_img.ravel().tolist(),
                                              "theta_deg": pair.gt.theta}) + "\n")
    main(["align", "--bev", str(HERE / "bev.png"), "--sat", str(HERE / "sat.png"),
          "--meta", str(HERE / "labels.csv"), "--gt", str(HERE / "gt.json"),
          "--output", str(HERE / "expected.jsonl")])


if __name__ == "__main__":
    build()
