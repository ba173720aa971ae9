import json

import pytest

from artifact.synthgen import FixtureSpec, generate
from artifact.taxonomy import default_taxonomy_path, load_taxonomy


@pytest.fixture(scope="session")
def tax():
    return load_taxonomy(default_taxonomy_path())


# video_id -> labels; 12 of 18 labels are False so the always_no stub
# scores exactly 12/18 overall.
FLEET_LABELS = {
    "vid_burst": {
        "texture_corruption": False,
        "object_deformation": False,
        "flicker": False,
        "motion_discontinuity": True,
        "unstable_trajectory": True,
        "implausible_parallax": False,
    },
    "vid_constant": {
        "texture_corruption": False,
        "object_deformation": False,
        "flicker": False,
        "motion_discontinuity": False,
        "unstable_trajectory": False,
        "implausible_parallax": True,
    },
    "vid_translate": {
        "texture_corruption": True,
        "object_deformation": False,
        "flicker": True,
        "motion_discontinuity": True,
        "unstable_trajectory": False,
        "implausible_parallax": False,
    },
}

FLEET_FALSE_FRACTION = 12 / 18


@pytest.fixture(scope="session")
def fleet(tmp_path_factory):
    """Three small fixture videos plus a matching annotation file."""
    root = tmp_path_factory.mktemp("fleet")
    videos = root / "videos"
    generate(
        FixtureSpec(
            kind="burst",
            n=14,
            width=64,
            height=64,
            seed=3,
            shift=(2, 1),
            intervals=((3, 5), (9, 11)),
        ),
        videos / "vid_burst",
    )
    generate(
        FixtureSpec(kind="constant", n=12, width=64, height=64, seed=4),
        videos / "vid_constant",
    )
    generate(
        FixtureSpec(
            kind="translate", n=12, width=64, height=64, seed=5, shift=(3, 0), at=5
        ),
        videos / "vid_translate",
    )

    annotations = root / "annotations.jsonl"
    with open(annotations, "w", encoding="utf-8") as fh:
        for vid in sorted(FLEET_LABELS):
            fh.write(
                json.dumps({"video_id": vid, "labels": FLEET_LABELS[vid]}) + "\n"
            )
    return videos, annotations
