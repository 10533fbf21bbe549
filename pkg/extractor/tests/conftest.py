import numpy as np
import pytest
import torch

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def fixture_images():
    """20 synthetic slices with blob structure so percentile masks carry
    learnable shape."""
    rng = np.random.Generator(np.random.PCG64(42))
    images = []
    yy, xx = np.mgrid[0:32, 0:32]
    for k in range(20):
        cy, cx = rng.uniform(8, 24, size=2)
        r = rng.uniform(4, 10)
        blob = (((yy - cy) ** 2 + (xx - cx) ** 2) < r**2).astype(float)
        img = 0.2 * rng.normal(size=(32, 32)) + 2.0 * blob + rng.uniform(0, 1)
        images.append(img.astype(np.float32))
    return images


@pytest.fixture(scope="session")
def volume_tree(tmp_path_factory, fixture_images):
    """Two tiny datasets on disk in MLVOL format with a manifest."""
    from segmeta_extractor.mlio import read_manifest  # noqa: F401

    root = tmp_path_factory.mktemp("volumes")
    rows = ["dataset_id,volume_path"]
    for d in range(2):
        for v in range(2):
            vox = np.stack(fixture_images[(d * 2 + v) * 5:(d * 2 + v) * 5 + 5])
            path = root / f"ds{d}_v{v}.mlvol"
            z, y, x = vox.shape
            header = f"MLVOL 1\ndims: {x} {y} {z}\ndtype: f32\norder: zyx\n\n"
            with open(path, "wb") as fh:
                fh.write(header.encode("ascii"))
                fh.write(vox.astype("<f4").tobytes())
            rows.append(f"ds{d},{path.name}")
    manifest = root / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n")
    return manifest
