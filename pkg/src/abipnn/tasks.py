"""Multispectral patch denoising: data, noise model, PSNR and experiment runner."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .bilinear import builtin_product, get_product
from .io import read_tensor, save_checkpoint, write_history, write_pgm, write_timing
from .network import Network, init_network, predict
from .train import TrainConfig, TrainingDiverged, TrainResult, train

log = logging.getLogger(__name__)

PEAK = 255.0
IDENTICAL = "identical"

# PSNR (dB) at full scale on the Columbia scene, sparsity/sigma columns as
# (5%,100) (10%,100) (15%,100) (10%,150) (10%,200).
REFERENCE_PSNR = {
    "columns": [[0.05, 100], [0.10, 100], [0.15, 100], [0.10, 150], [0.10, 200]],
    "noisy": [20.92, 18.16, 16.35, 14.64, 12.10],
    "dnn_concat": [25.06, 24.80, 24.93, 24.59, 24.03],
    "dnn_parallel": [30.18, 28.88, 28.06, 27.17, 25.88],
    "abipnn": [33.92, 32.47, 31.74, 31.01, 29.55],
    "k_svd": [22.73, 22.60, 22.49, 22.38, 22.20],
    "3dk_svd": [22.61, 22.53, 22.47, 22.41, 22.20],
    "lrta": [23.54, 26.84, 26.65, 23.90, 22.03],
    "dnmdl": [24.07, 23.73, 25.16, 17.89, 16.83],
    "parafac": [27.07, 26.86, 26.72, 26.13, 25.24],
    "k_tsvd": [27.19, 26.98, 26.79, 26.18, 25.44],
}


@dataclass
class MultispectralImage:
    data: np.ndarray  # (H, W, bands), intensities on [0, 255]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]


@dataclass
class NoiseSpec:
    sparsity: float = 0.10
    sigma: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError(f"sparsity must lie in [0, 1], got {self.sparsity}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass
class PatchSet:
    inputs: np.ndarray  # (P, patch*patch, N), normalized noisy patches
    targets: np.ndarray  # (P, patch*patch, N), normalized clean patches
    origins: np.ndarray  # (P, 2) top-left (row, col)

    def __len__(self) -> int:
        return len(self.inputs)


def _smooth_field(rng, h, w, n_waves=4, scale=1.0):
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    out = np.zeros((h, w))
    for _ in range(n_waves):
        fy, fx = rng.uniform(0.3, 2.0, size=2)
        ph = rng.uniform(0, 2 * np.pi)
        out += np.cos(2 * np.pi * (fy * yy + fx * xx) + ph)
    return scale * out / n_waves


def synth_image(height: int = 64, width: int = 64, bands: int = 10, seed: int = 0) -> MultispectralImage:
    """Piecewise-smooth scene of a few materials with smooth spectra.

    Each region gets a spectrum that varies slowly over the band index, so
    neighbouring bands are strongly correlated, as in real multispectral
    captures.  Deterministic per seed.
    """
    if height < 8 or width < 8 or bands < 1:
        raise ValueError("need height, width >= 8 and bands >= 1")
    rng = np.random.default_rng(seed)
    h, w = height, width
    yy, xx = np.mgrid[0:h, 0:w]
    n_regions = 6
    # Voronoi partition into regions
    centers = rng.uniform(0, 1, size=(n_regions, 2)) * [h, w]
    dist = (yy[..., None] - centers[:, 0]) ** 2 + (xx[..., None] - centers[:, 1]) ** 2
    label = np.argmin(dist, axis=-1)
    # a couple of discs on top
    for r in range(2):
        cy, cx = rng.uniform(0.2, 0.8, size=2) * [h, w]
        rad = rng.uniform(0.1, 0.2) * min(h, w)
        label = np.where((yy - cy) ** 2 + (xx - cx) ** 2 < rad**2, n_regions + r, label)
    n_mat = n_regions + 2

    t = np.linspace(0.0, 1.0, bands)
    base = rng.uniform(50, 200, size=n_mat)
    amp = rng.uniform(10, 50, size=n_mat)
    freq = rng.uniform(0.3, 1.0, size=n_mat)
    phase = rng.uniform(0, 2 * np.pi, size=n_mat)
    spectra = base[:, None] + amp[:, None] * np.sin(2 * np.pi * freq[:, None] * t + phase[:, None])

    shading = 1.0 + _smooth_field(rng, h, w, scale=0.25)
    texture = _smooth_field(rng, h, w, n_waves=6, scale=8.0)
    band_tilt = _smooth_field(rng, h, w, scale=10.0)
    data = spectra[label] * shading[..., None] + texture[..., None] + band_tilt[..., None] * (t - 0.5)
    return MultispectralImage(np.clip(data, 0.0, PEAK))


def add_noise(img: MultispectralImage, spec: NoiseSpec) -> MultispectralImage:
    """Add N(0, sigma^2) to round(sparsity*H*W) distinct pixels per band, then clip."""
    rng = np.random.default_rng(spec.seed)
    h, w, nb = img.data.shape
    count = int(round(spec.sparsity * h * w))
    out = img.data.copy()
    if count == 0 or spec.sigma == 0:
        return MultispectralImage(out)
    for band in range(nb):
        idx = rng.choice(h * w, size=count, replace=False)
        flat = out[..., band].reshape(-1)
        flat[idx] += rng.normal(0.0, spec.sigma, size=count)
        out[..., band] = flat.reshape(h, w)
    return MultispectralImage(np.clip(out, 0.0, PEAK))


def _patches(data: np.ndarray, patch: int, hop: int) -> tuple[np.ndarray, np.ndarray]:
    win = sliding_window_view(data, (patch, patch), axis=(0, 1))[::hop, ::hop]  # (Py, Px, N, p, p)
    py, px = win.shape[:2]
    nb = data.shape[2]
    flat = win.transpose(0, 1, 3, 4, 2).reshape(py * px, patch * patch, nb)
    rows, cols = np.meshgrid(np.arange(py) * hop, np.arange(px) * hop, indexing="ij")
    return flat, np.stack([rows.ravel(), cols.ravel()], axis=1)


def extract_patches(clean: MultispectralImage, noisy: MultispectralImage, patch: int = 8, hop: int = 1) -> PatchSet:
    """Aligned overlapping patches, each flattened to ``(patch*patch, bands)`` on [0, 1]."""
    if clean.data.shape != noisy.data.shape:
        raise ValueError(f"shape mismatch: {clean.data.shape} vs {noisy.data.shape}")
    if patch > min(clean.height, clean.width):
        raise ValueError(f"patch {patch} larger than image {clean.data.shape[:2]}")
    tgt, origins = _patches(clean.data, patch, hop)
    inp, _ = _patches(noisy.data, patch, hop)
    return PatchSet(inp / PEAK, tgt / PEAK, origins)


def psnr(reference, test, peak: float = PEAK) -> float | str:
    """10*log10(peak^2 / MSE) in dB; returns ``IDENTICAL`` when MSE is zero."""
    reference = np.asarray(getattr(reference, "data", reference), dtype=np.float64)
    test = np.asarray(getattr(test, "data", test), dtype=np.float64)
    if reference.shape != test.shape:
        raise ValueError(f"shape mismatch: {reference.shape} vs {test.shape}")
    mse = np.mean((reference - test) ** 2)
    if mse == 0:
        return IDENTICAL
    return float(10.0 * np.log10(peak**2 / mse))


def mean_patch_psnr(reference: np.ndarray, test: np.ndarray) -> dict:
    """Average PSNR over patches (leading axis), intensities in [0, 255].

    Identical patches have no finite PSNR; they are counted and left out of
    the mean.  If every patch is identical the mean is ``IDENTICAL``.
    """
    err = np.mean((reference - test) ** 2, axis=tuple(range(1, reference.ndim)))
    finite = err > 0
    if not finite.any():
        return {"psnr": IDENTICAL, "n_identical": int(len(err))}
    vals = 10.0 * np.log10(PEAK**2 / err[finite])
    return {"psnr": float(vals.mean()), "n_identical": int((~finite).sum())}


# --------------------------------------------------------------------------
# experiment
# --------------------------------------------------------------------------

@dataclass
class ImageConfig:
    h: int = 64
    w: int = 64
    bands: int = 10
    seed: int = 0


@dataclass
class NetConfig:
    topology: list[int] = field(default_factory=lambda: [64, 64, 64, 64])
    product: str = "circular"


@dataclass
class DenoiseConfig:
    image: ImageConfig = field(default_factory=ImageConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(max_epochs=500))
    baselines: list[str] = field(default_factory=lambda: ["dnn_concat"])
    # 10000 of 39204 patches at full scale; the same fraction of the 3249 patches of a 64x64 image
    n_train: int = 830
    split_seed: int = 0
    input_path: str | None = None  # optional ABTN (H, W, bands) clean image
    dump_bands: list[int] = field(default_factory=list)  # bands written as PGM slices

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiseConfig":
        d = dict(d)
        return cls(
            image=ImageConfig(**d.pop("image", {})),
            noise=NoiseSpec(**d.pop("noise", {})),
            net=NetConfig(**d.pop("net", {})),
            train=TrainConfig(**{**asdict(cls().train), **d.pop("train", {})}),
            **d,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def concat_width_for(target_params: int, io_width: int, n_hidden: int) -> int:
    """Smallest hidden width h with params(io-h-...-h-io, N=1) >= target_params."""
    def count(h: int) -> int:
        dims = [io_width] + [h] * n_hidden + [io_width]
        return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))

    h = 1
    while count(h) < target_params:
        h += 1
    return h


def _to_concat(x: np.ndarray) -> np.ndarray:
    # (P, R, N) -> (P, R*N, 1), band-major so each band's pixels stay contiguous
    p, r, n = x.shape
    return x.transpose(0, 2, 1).reshape(p, r * n, 1)


def _from_concat(y: np.ndarray, n: int) -> np.ndarray:
    p, rn, _ = y.shape
    return y.reshape(p, n, rn // n).transpose(0, 2, 1)


def reassemble(patches: np.ndarray, origins: np.ndarray, shape: tuple[int, int, int], patch: int = 8) -> np.ndarray:
    """Average overlapping ``(P, patch*patch, bands)`` patches back into an image."""
    acc = np.zeros(shape)
    hits = np.zeros(shape[:2])
    for (r, c), block in zip(origins, patches.reshape(-1, patch, patch, shape[2])):
        acc[r : r + patch, c : c + patch] += block
        hits[r : r + patch, c : c + patch] += 1
    covered = hits > 0
    acc[covered] /= hits[covered][:, None]
    return acc


def _fit(name, net, x, y, cfg: DenoiseConfig, out_dir: Path | None) -> tuple[TrainResult | None, dict]:
    row = {"params": net.n_params, "topology": net.topology, "product": net.product.name}
    try:
        res = train(net, x, y, cfg.train)
    except TrainingDiverged as e:
        log.warning("%s diverged: %s", name, e)
        row.update(diverged=True, epochs=len(e.history))
        return None, row
    row.update(diverged=False, epochs=res.epochs_run, best_epoch=res.best_epoch)
    if out_dir is not None:
        p = out_dir / f"history_{name}.csv"
        write_history(p, res.history)
        write_timing(out_dir / f"timing_{name}.csv", res.history)
        save_checkpoint(out_dir / f"checkpoint_{name}.abip", res.net)
        row["history_csv"] = p.name
    return res, row


def run_denoise_experiment(cfg: DenoiseConfig, out_dir: str | Path | None = None) -> dict:
    """Train the vector-neuron denoiser and requested scalar baselines.

    Returns a report with patch-averaged PSNR on held-out patches for the
    noisy input and for every method, plus parameter counts.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if cfg.input_path:
        clean = MultispectralImage(np.clip(read_tensor(cfg.input_path), 0, PEAK))
    else:
        clean = synth_image(cfg.image.h, cfg.image.w, cfg.image.bands, cfg.image.seed)
    noisy = add_noise(clean, cfg.noise)
    ps = extract_patches(clean, noisy)
    nb = clean.bands
    order = np.random.default_rng(cfg.split_seed).permutation(len(ps))
    n_train = min(cfg.n_train, len(ps) - 1)
    tr, te = order[:n_train], order[n_train:]
    x_tr, y_tr, x_te, y_te = ps.inputs[tr], ps.targets[tr], ps.inputs[te], ps.targets[te]
    ref = y_te * PEAK

    report: dict = {
        "config": cfg.to_dict(),
        "n_patches": len(ps),
        "n_train": int(len(tr)),
        "n_test": int(len(te)),
        "methods": {},
        "reference_psnr": REFERENCE_PSNR,
    }
    noisy_psnr = mean_patch_psnr(ref, x_te * PEAK)
    report["psnr_noisy"] = noisy_psnr["psnr"]
    report["degenerate"] = noisy_psnr["psnr"] == IDENTICAL

    topo = cfg.net.topology
    if topo[0] != ps.inputs.shape[1] or topo[-1] != ps.targets.shape[1]:
        raise ValueError(f"topology {topo} must start and end with {ps.inputs.shape[1]}")
    prod = get_product(cfg.net.product, nb)
    seed = cfg.train.seed
    denoised: dict[str, np.ndarray] = {}

    net = init_network(topo, prod, seed=seed)
    res, row = _fit("abipnn", net, x_tr, y_tr, cfg, out)
    abipnn_net = res.net if res is not None else None
    if res is not None:
        denoised["abipnn"] = predict(res.net, x_te)
    report["methods"]["abipnn"] = row
    target_params = net.n_params

    scalar = builtin_product("scalar")
    if "dnn_concat" in cfg.baselines:
        io = topo[0] * nb
        width = concat_width_for(target_params, io, len(topo) - 2)
        cnet = init_network([io] + [width] * (len(topo) - 2) + [io], scalar, seed=seed)
        res, row = _fit("dnn_concat", cnet, _to_concat(x_tr), _to_concat(y_tr), cfg, out)
        if res is not None:
            denoised["dnn_concat"] = _from_concat(predict(res.net, _to_concat(x_te)), nb)
        report["methods"]["dnn_concat"] = row

    if "dnn_parallel" in cfg.baselines:
        outs, rows = [], []
        for band in range(nb):
            bnet = init_network(topo, scalar, seed=seed + band)
            res, row = _fit(f"dnn_parallel_band{band}", bnet, x_tr[..., band : band + 1], y_tr[..., band : band + 1], cfg, out)
            rows.append(row)
            if res is not None:
                outs.append(predict(res.net, x_te[..., band : band + 1]))
        report["methods"]["dnn_parallel"] = {
            "params": sum(r["params"] for r in rows),
            "topology": topo,
            "product": "scalar",
            "diverged": any(r["diverged"] for r in rows),
            "epochs": [r["epochs"] for r in rows],
        }
        if len(outs) == nb:
            denoised["dnn_parallel"] = np.concatenate(outs, axis=-1)

    for name, pred in denoised.items():
        stats = mean_patch_psnr(ref, pred * PEAK)
        report["methods"][name].update(psnr=stats["psnr"], n_identical=stats["n_identical"])
    report["psnr_abipnn"] = report["methods"]["abipnn"].get("psnr")

    if out is not None and cfg.dump_bands:
        images = {"original": clean.data, "noisy": noisy.data}
        if abipnn_net is not None:
            images["denoised"] = reassemble(predict(abipnn_net, ps.inputs) * PEAK, ps.origins, clean.data.shape)
        for band in cfg.dump_bands:
            if not 0 <= band < nb:
                raise ValueError(f"dump band {band} outside 0..{nb - 1}")
            for kind, data in images.items():
                write_pgm(out / f"{kind}_band{band}.pgm", data[..., band])
    return report
