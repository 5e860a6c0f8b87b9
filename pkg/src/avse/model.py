"""The enhancement network: visual stream, audio stream, fusion with mask
prediction, and the phase refinement sub-network."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import dsp

PAPER_BLOCKS = (10, 5, 15, 6)  # visual / audio / fusion / phase
PHASE_INIT_SCALE = 1e-3


@dataclass
class NetConfig:
    visual_dim: int = 512
    mag_channels: int = 1536
    phase_channels: int = 1024
    n_visual_blocks: int = 10
    n_audio_blocks: int = 5
    n_fusion_blocks: int = 15
    n_phase_blocks: int = 6
    kernel_width: int = 5
    n_mels: int = 80
    freq_bins: int = 321
    upsample_kernel: int = 4

    def __post_init__(self):
        counts = (
            self.n_visual_blocks,
            self.n_audio_blocks,
            self.n_fusion_blocks,
            self.n_phase_blocks,
        )
        if counts != PAPER_BLOCKS or self.kernel_width != 5:
            raise ValueError(
                f"block counts {counts} / kernel {self.kernel_width} are fixed "
                f"to {PAPER_BLOCKS} / 5; only channel sizes are configurable"
            )
        for name in ("visual_dim", "mag_channels", "phase_channels", "n_mels", "freq_bins"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def toy(cls, **overrides) -> "NetConfig":
        """Desk-scale preset: same architecture, small channel counts."""
        base = dict(visual_dim=32, mag_channels=128, phase_channels=96)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def paper(cls) -> "NetConfig":
        return cls()


@dataclass
class VisualFeatureSequence:
    """Per-video-frame feature vectors at 25 fps."""

    values: np.ndarray
    frame_rate: int = 25

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("visual features must be a T_v x D_v matrix")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class EnhancementResult:
    mask: np.ndarray
    enhanced_magnitude: dsp.MagnitudeSpectrogram
    enhanced_phase: dsp.PhaseSpectrogram
    waveform: dsp.Waveform


def mel_features(noisy_mag: np.ndarray, fb: dsp.MelFilterbank) -> np.ndarray:
    """Audio-stream input: log-compressed mel magnitudes. Compression keeps
    the network input scale-stable across mixtures; masking still happens
    on the linear-scale spectrogram."""
    return np.log1p(noisy_mag @ fb.weights.T)


class ConvBlock:
    """Pre-activation residual block: skip(x) + sep_conv(relu(bn(x)))."""

    __slots__ = ("gamma", "beta", "state", "depthwise", "pointwise", "skip", "stride")

    def __init__(self, gamma, beta, state, depthwise, pointwise, skip, stride):
        self.gamma = gamma
        self.beta = beta
        self.state = state
        self.depthwise = depthwise
        self.pointwise = pointwise
        self.skip = skip
        self.stride = stride

    def parameters(self):
        out = [self.gamma, self.beta, self.depthwise, self.pointwise]
        if self.skip is not None:
            out.append(self.skip)
        return out


def conv_block(x: ag.DiffTensor, block: ConvBlock, mode: str = "train") -> ag.DiffTensor:
    h = ag.batch_norm(x, block.state, block.gamma, block.beta, mode)
    h = ag.relu(h)
    h = ag.sep_conv1d(h, block.depthwise, block.pointwise, block.stride)
    s = x
    if block.stride == 2:
        s = ag.avg_pool_stride2(s)
    if block.skip is not None:
        s = ag.pointwise_projection(s, block.skip)
    return s + h


class ModelParameters:
    """All learnable weights plus batch-norm running statistics, with
    unique names for checkpointing."""

    def __init__(self, cfg: NetConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params: dict[str, ag.Parameter] = {}
        self.bn_states: dict[str, ag.BatchNormState] = {}
        rng = np.random.default_rng(seed)

        c = cfg.mag_channels
        self.visual_blocks = [
            self._block(f"visual/block{i:02d}", cfg.visual_dim if i == 0 else c, c, 1, rng)
            for i in range(cfg.n_visual_blocks)
        ]
        self.audio_blocks = [
            self._block(
                f"audio/block{i:02d}",
                cfg.n_mels if i == 0 else c,
                c,
                2 if i in (1, 3) else 1,
                rng,
            )
            for i in range(cfg.n_audio_blocks)
        ]
        self.fusion_blocks = [
            self._block(f"fusion/block{i:02d}", 2 * c if i == 0 else c, c, 1, rng)
            for i in range(cfg.n_fusion_blocks)
        ]
        ku = cfg.upsample_kernel
        self.up_convs = [
            self._param(f"fusion/up{i}", self._uniform(rng, (ku, c, c), c * ku // 2))
            for i in range(2)
        ]
        self.mask_proj = self._param("mask/w", self._uniform(rng, (c, cfg.freq_bins), c))

        cp = cfg.phase_channels
        f = cfg.freq_bins
        self.w_mag_phase = self._param(
            "phase/in_mag", rng.uniform(-PHASE_INIT_SCALE, PHASE_INIT_SCALE, (f, cp))
        )
        self.w_noisy_phase = self._param(
            "phase/in_phi", rng.uniform(-PHASE_INIT_SCALE, PHASE_INIT_SCALE, (2 * f, cp))
        )
        self.phase_blocks = [
            self._block(
                f"phase/block{i:02d}",
                2 * cp if i == 0 else cp,
                cp,
                1,
                rng,
                weight_scale=PHASE_INIT_SCALE,
            )
            for i in range(cfg.n_phase_blocks)
        ]
        # Zero output projection: the untrained residual is exactly zero and
        # the noisy phase propagates to the output unchanged.
        self.phase_out = self._param("phase/out", np.zeros((cp, 2 * f)))

    # -- construction helpers --

    def _uniform(self, rng, shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, shape)

    def _param(self, name: str, values) -> ag.Parameter:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name}")
        p = ag.Parameter(name, np.asarray(values, dtype=self.dtype))
        self.params[name] = p
        return p

    def _block(self, name, c_in, c_out, stride, rng, weight_scale=None) -> ConvBlock:
        k = self.cfg.kernel_width
        if weight_scale is None:
            dw = self._uniform(rng, (k, c_in), k)
            pw = self._uniform(rng, (c_in, c_out), c_in)
            skip_w = None if c_in == c_out else self._uniform(rng, (c_in, c_out), c_in)
        else:
            dw = rng.uniform(-weight_scale, weight_scale, (k, c_in))
            pw = rng.uniform(-weight_scale, weight_scale, (c_in, c_out))
            skip_w = (
                None
                if c_in == c_out
                else rng.uniform(-weight_scale, weight_scale, (c_in, c_out))
            )
        state = ag.BatchNormState(c_in, dtype=self.dtype)
        self.bn_states[name] = state
        return ConvBlock(
            gamma=self._param(f"{name}/gamma", np.ones(c_in)),
            beta=self._param(f"{name}/beta", np.zeros(c_in)),
            state=state,
            depthwise=self._param(f"{name}/dw", dw),
            pointwise=self._param(f"{name}/pw", pw),
            skip=None if skip_w is None else self._param(f"{name}/skip", skip_w),
            stride=stride,
        )

    # -- parameter grouping --

    def all_parameters(self) -> list[ag.Parameter]:
        return list(self.params.values())

    def magnitude_parameters(self) -> list[ag.Parameter]:
        prefixes = ("visual/", "audio/", "fusion/", "mask/")
        return [p for n, p in self.params.items() if n.startswith(prefixes)]

    def phase_parameters(self) -> list[ag.Parameter]:
        return [p for n, p in self.params.items() if n.startswith("phase/")]

    # -- checkpoint blobs --

    def to_blobs(self) -> dict[str, np.ndarray]:
        blobs = {n: p.values for n, p in self.params.items()}
        for name, st in self.bn_states.items():
            blobs[f"bn/{name}/mean"] = st.mean
            blobs[f"bn/{name}/var"] = st.var
        c = self.cfg
        blobs["meta/net_config"] = np.array(
            [c.visual_dim, c.mag_channels, c.phase_channels, c.n_mels, c.freq_bins,
             c.upsample_kernel],
            dtype=np.float64,
        )
        return blobs

    def load_blobs(self, blobs: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in blobs:
                raise ValueError(f"checkpoint is missing parameter {name}")
            if blobs[name].shape != p.values.shape:
                raise ValueError(
                    f"{name}: checkpoint shape {blobs[name].shape} != {p.values.shape}"
                )
            p.values = blobs[name].astype(self.dtype)
        for name, st in self.bn_states.items():
            st.mean = blobs[f"bn/{name}/mean"].astype(self.dtype)
            st.var = blobs[f"bn/{name}/var"].astype(self.dtype)

    @classmethod
    def from_blobs(cls, blobs: dict[str, np.ndarray], dtype=np.float32) -> "ModelParameters":
        meta = blobs.get("meta/net_config")
        if meta is None:
            raise ValueError("checkpoint has no meta/net_config blob")
        vd, mc, pc, nm, fb, ku = (int(round(v)) for v in meta)
        cfg = NetConfig(
            visual_dim=vd, mag_channels=mc, phase_channels=pc, n_mels=nm,
            freq_bins=fb, upsample_kernel=ku,
        )
        mp = cls(cfg, seed=0, dtype=dtype)
        mp.load_blobs(blobs)
        return mp


# -- forward passes -----------------------------------------------------------


def visual_stream(v: ag.DiffTensor, mp: ModelParameters, mode: str = "train") -> ag.DiffTensor:
    if v.values.shape[-1] != mp.cfg.visual_dim:
        raise ValueError(
            f"visual feature dim {v.values.shape[-1]} != configured {mp.cfg.visual_dim}"
        )
    x = v
    for block in mp.visual_blocks:
        x = conv_block(x, block, mode)
    return x


def audio_stream(mel: ag.DiffTensor, mp: ModelParameters, mode: str = "train") -> ag.DiffTensor:
    t = mel.values.shape[-2]
    if t % 4 != 0:
        raise ValueError(f"audio frame count {t} must be divisible by 4")
    x = mel
    for block in mp.audio_blocks:
        x = conv_block(x, block, mode)
    return x


def fusion_and_mask(
    fv: ag.DiffTensor,
    fa: ag.DiffTensor,
    noisy_mag: np.ndarray,
    mp: ModelParameters,
    mode: str = "train",
):
    """Fuse the streams, predict the soft mask, and filter the noisy
    magnitudes. Returns (mask, enhanced magnitude) as DiffTensors."""
    t_v = fv.values.shape[-2]
    if fa.values.shape[-2] != t_v:
        raise ValueError(
            f"stream resolution mismatch: visual {t_v}, audio {fa.values.shape[-2]}"
        )
    if noisy_mag.shape[-2] != 4 * t_v:
        raise ValueError(
            f"magnitude frames {noisy_mag.shape[-2]} != 4 x visual frames {t_v}"
        )
    x = ag.concat_channels(fv, fa)
    for i, block in enumerate(mp.fusion_blocks):
        x = conv_block(x, block, mode)
        if i == 4:
            x = ag.transposed_conv1d(x, mp.up_convs[0])
        elif i == 9:
            x = ag.transposed_conv1d(x, mp.up_convs[1])
    mask = ag.sigmoid(ag.pointwise_projection(x, mp.mask_proj))
    enhanced = mask * noisy_mag.astype(mask.dtype)
    return mask, enhanced


def phase_subnet(
    enhanced_mag: ag.DiffTensor,
    noisy_phase: np.ndarray,
    mp: ModelParameters,
    mode: str = "train",
) -> ag.DiffTensor:
    """Predict a residual over the noisy phase and renormalize the pairs."""
    f = mp.cfg.freq_bins
    if enhanced_mag.values.shape[-1] != f or noisy_phase.shape[-1] != 2 * f:
        raise ValueError(
            f"phase subnet shapes: magnitude width {enhanced_mag.values.shape[-1]} "
            f"(need {f}), phase width {noisy_phase.shape[-1]} (need {2 * f})"
        )
    phi_n = ag.DiffTensor(noisy_phase.astype(enhanced_mag.dtype))
    a = ag.pointwise_projection(enhanced_mag, mp.w_mag_phase)
    b = ag.pointwise_projection(phi_n, mp.w_noisy_phase)
    x = ag.concat_channels(a, b)
    for block in mp.phase_blocks:
        x = conv_block(x, block, mode)
    residual = ag.pointwise_projection(x, mp.phase_out)
    return ag.l2_normalize_pairs(residual + phi_n)


def enhance(
    mixture: dsp.Waveform,
    visual: VisualFeatureSequence,
    mp: ModelParameters,
    stft_cfg: dsp.StftConfig | None = None,
) -> EnhancementResult:
    """Full inference: analysis, masking, phase refinement, resynthesis."""
    cfg = stft_cfg or dsp.StftConfig()
    t_audio = len(mixture.samples) // cfg.hop
    if len(mixture.samples) % cfg.hop != 0 or t_audio != 4 * visual.n_frames:
        raise ValueError(
            f"misaligned lengths: {len(mixture.samples)} samples gives "
            f"{t_audio} spectrogram frames, visual stream has {visual.n_frames} "
            f"frames (need 4 spectrogram frames per visual frame)"
        )
    spec = dsp.stft(mixture, cfg)
    noisy_mag, noisy_phase = dsp.split_mag_phase(spec)
    fb = dsp.mel_filterbank(cfg, mp.cfg.n_mels)
    mel = mel_features(noisy_mag.values, fb)

    dt = mp.dtype
    fv = visual_stream(ag.DiffTensor(visual.values.astype(dt)), mp, "eval")
    fa = audio_stream(ag.DiffTensor(mel.astype(dt)), mp, "eval")
    mask, enhanced = fusion_and_mask(fv, fa, noisy_mag.values, mp, "eval")
    phi_hat = phase_subnet(enhanced, noisy_phase.values, mp, "eval")

    mag_out = dsp.MagnitudeSpectrogram(np.asarray(enhanced.values, dtype=np.float64))
    phase_out = dsp.PhaseSpectrogram(np.asarray(phi_hat.values, dtype=np.float64))
    wave = dsp.istft(dsp.merge_mag_phase(mag_out, phase_out, cfg))
    return EnhancementResult(
        mask=np.asarray(mask.values, dtype=np.float64),
        enhanced_magnitude=mag_out,
        enhanced_phase=phase_out,
        waveform=wave,
    )
