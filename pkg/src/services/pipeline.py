"""
Sequential quantization pipeline.

Each block is traversed in execution order. At every step the inputs of the
next quantization site are collected by running the model with everything
quantized so far (or the full-precision model in "fp" prefix mode), the site
gets its quantizer, and the weights fed by it are reconstructed:

    ln1        LayerNorm branch (clip, channel-wise params, reparameterize
               into LN1 and the Q/K/V projections), then weights wq, wk, wv
    q, k, v    uniform layer-wise, percentile calibration
    softmax    log-sqrt(2) with parity reparameterization (or log2 / uniform)
    attn_out   uniform layer-wise, then weight wo
    ln2        LayerNorm branch into mlp_up, then weight mlp_up
    mlp_hidden uniform layer-wise, then weight mlp_down
"""

from dataclasses import replace
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from src.models.quant_config import QuantConfig
from src.models.quant_params import CalibRange, LogQuantParams
from src.models.quantized_model import ActivationQuantizer, QuantizedBlock, QuantizedModel, WeightRecord
from src.models.report import LayerReport
from src.models.transformer import LinearLayerParams, ToyModel, TransformerBlock
from src.services.clipping import CLIP_INIT_GRID, optimize_clip, optimize_clip_direct
from src.services.gptq import GPTQ, HessianAccumulator, accumulate_hessian, proxy_loss, rtn_quantize_layer, weight_params
from src.services.quantizers import (
    calibrate_minmax,
    calibrate_percentile,
    log_fake_quant,
    params_from_range,
    quant_mse,
    uniform_fake_quant,
    widen_degenerate,
)
from src.services.reparam import compensate_linear, reparam_layernorm
from src.services.toymodel import QuantHooks, model_forward
from src.utils.tensor import Tensor, as_tensor
from src.utils.validators import ContractError

LN_CONSUMERS = {"ln1": ("wq", "wk", "wv"), "ln2": ("mlp_up",)}


class PipelineError(ContractError):
    """A pipeline step failed; carries the layer id and branch it failed in."""

    def __init__(self, message: str, layer_id: str, branch: str):
        super().__init__(f"[{layer_id} / {branch}] {message}")
        self.layer_id = layer_id
        self.branch = branch


class _RunState:
    """Mutable bookkeeping of one pipeline run."""

    def __init__(self, model: ToyModel):
        self.tokens = model.tokens
        self.fp_blocks: List[TransformerBlock] = list(model.blocks)
        self.q_blocks: List[TransformerBlock] = list(model.blocks)
        self.quantizers: Dict[Tuple[int, str], ActivationQuantizer] = {}
        self.records = [QuantizedBlock(ln1=b.ln1, ln2=b.ln2, heads=b.heads, causal=b.causal)
                        for b in model.blocks]
        self.reports: List[LayerReport] = []

    def update_block(self, i: int, **changes) -> None:
        """Apply a float-parameter change to both the fp and the quantized view."""
        self.fp_blocks[i] = replace(self.fp_blocks[i], **changes)
        self.q_blocks[i] = replace(self.q_blocks[i], **changes)


class RepQuantPipeline:
    """
    Runs calibration, dual clipping, scale reparameterization and GPTQ over a model.

    Args:
        config: Quantization settings
        verbose: Print progress with [PIPELINE]/[CALIB]/... tags
    """

    def __init__(self, config: Optional[QuantConfig] = None, verbose: bool = False):
        self.config = config or QuantConfig()
        self.verbose = verbose

    def _log(self, tag: str, message: str) -> None:
        if self.verbose:
            print(f"[{tag}] {message}")

    def run(self, model: ToyModel, calib: Tensor) -> Tuple[QuantizedModel, List[LayerReport]]:
        """
        Quantize a model.

        Args:
            model: Full-precision model
            calib: Calibration inputs [S x N x D]; the first calib_size samples are used

        Returns:
            Tuple of (QuantizedModel, LayerReport list in pipeline order)

        Raises:
            PipelineError: If any step fails, with the layer id and branch attached
        """
        cfg = self.config
        calib = self._guard("input", "calibration", as_tensor, calib)
        if calib.ndim != 3 or calib.shape[0] == 0:
            raise PipelineError(f"calibration set must be a non-empty [S x N x D] tensor, got {calib.shape}",
                                "input", "calibration")
        if calib.shape[-1] != model.embed_dim:
            raise PipelineError(f"calibration width {calib.shape[-1]} != model width {model.embed_dim}",
                                "input", "calibration")
        calib = calib[: cfg.calib_size]
        self._log("PIPELINE", f"{model} with {calib.shape[0]} calibration samples, {cfg}")

        state = _RunState(model)
        for i in range(len(model.blocks)):
            self._layernorm_step(state, calib, i, "ln1")
            self._generic_step(state, calib, i, ("q", "k", "v"))
            self._softmax_step(state, calib, i)
            self._generic_step(state, calib, i, ("attn_out",))
            self._weights_from_site(state, calib, i, "attn_out", ("wo",))
            self._layernorm_step(state, calib, i, "ln2")
            self._generic_step(state, calib, i, ("mlp_hidden",))
            self._weights_from_site(state, calib, i, "mlp_hidden", ("mlp_down",))

        for i, record in enumerate(state.records):
            record.ln1 = state.q_blocks[i].ln1
            record.ln2 = state.q_blocks[i].ln2
        quantized = QuantizedModel(state.records, model.embed_dim, model.tokens, cfg)
        quantized.check_invariants()
        self._log("SUCCESS", f"quantized {len(model.blocks)} block(s), {len(state.reports)} report entries")
        return quantized, state.reports

    # collection

    def _collect(self, state: _RunState, calib: Tensor, i: int, sites: Iterable[str],
                 quantized_output: bool = False) -> Dict[str, Tensor]:
        """Inputs (or post-quant outputs) at block i's sites, from the configured prefix."""
        keys = [(i, site) for site in sites]
        if self.config.prefix_mode == "quantized":
            blocks = state.q_blocks[: i + 1]
            hooks = QuantHooks({k: q.fake_quant for k, q in state.quantizers.items()}, record=keys)
        else:
            blocks = state.fp_blocks[: i + 1]
            hooks = QuantHooks(None, record=keys)
        model_forward(calib, ToyModel(blocks, state.tokens), hooks)
        return {site: hooks.collected((i, site), quantized=quantized_output) for site in sites}

    def _guard(self, layer_id: str, branch: str, fn, *args):
        try:
            return fn(*args)
        except PipelineError:
            raise
        except ContractError as e:
            raise PipelineError(str(e), layer_id, branch) from e

    # activation branches

    def _layernorm_step(self, state: _RunState, calib: Tensor, i: int, site: str) -> None:
        layer_id = f"block{i}.{site}"
        x = self._collect(state, calib, i, [site])[site]
        self._guard(layer_id, "layernorm-act", self._layernorm_branch, state, i, site, x)
        consumers = LN_CONSUMERS[site]
        inputs = self._collect(state, calib, i, [site], quantized_output=True)[site]
        self._guard(layer_id, "weight", self._quantize_weights, state, i, consumers, inputs)

    def _layernorm_branch(self, state: _RunState, i: int, site: str, x: Tensor) -> None:
        cfg = self.config
        layer_id = f"block{i}.{site}"
        bits = cfg.act_bits
        raw = widen_degenerate(calibrate_minmax(x, "channel"))
        baseline = params_from_range(raw, bits, "channel")
        pre_loss = quant_mse(x, uniform_fake_quant(x, baseline))
        flags = list(raw.flags)
        positive_min = int(np.sum(raw.lower > 0))
        if positive_min:
            flags.append(f"positive_min_channels={positive_min}")

        if cfg.ln_granularity == "layer":
            params = params_from_range(widen_degenerate(calibrate_minmax(x, "layer")), bits, "layer")
            state.quantizers[(i, site)] = ActivationQuantizer.from_uniform(params)
            state.records[i].activations[site] = state.quantizers[(i, site)]
            self._report(state, layer_id, "layernorm-act", "uniform-layer", pre_loss,
                         quant_mse(x, uniform_fake_quant(x, params)), {}, flags)
            return

        clip_stats = {}
        bounds: CalibRange = raw
        if cfg.enable_clip and cfg.clip_method == "direct":
            bounds, best_loss = optimize_clip_direct(x, bits, cfg.clip_iters, cfg.clip_lr, cfg.clip_init,
                                                     init_grid=CLIP_INIT_GRID)
            clip_stats = {"method": "direct", "best_loss": best_loss, "iterations": cfg.clip_iters}
            self._log("CLIP", f"{layer_id}: direct bound search, loss {best_loss:.6g}")
        elif cfg.enable_clip:
            result = optimize_clip(x, bits, cfg.clip_iters, cfg.clip_lr, cfg.clip_init, verbose=self.verbose,
                                   init_grid=CLIP_INIT_GRID)
            bounds = result.bounds
            clip_stats = dict(result.get_metadata(), method="sigmoid")
            flags = sorted(set(flags) | set(result.flags))
        cw = params_from_range(bounds, bits, "channel")
        post_loss = quant_mse(x, uniform_fake_quant(x, cw))

        if cfg.ln_granularity == "channel":
            quantizer = ActivationQuantizer.from_uniform(cw)
            method = "uniform-channel"
        else:
            block = state.fp_blocks[i]
            ln = getattr(block, site)
            consumers = LN_CONSUMERS[site]
            first = getattr(block, consumers[0])
            res = reparam_layernorm(cw, ln, first, cfg.scale_reduction, cfg.zero_point_mode)
            changes = {site: res.new_ln, consumers[0]: res.new_linear}
            for name in consumers[1:]:
                changes[name] = compensate_linear(getattr(block, name), res.r1, res.shift)
            state.update_block(i, **changes)
            quantizer = ActivationQuantizer.from_uniform(res.new_quant)
            state.records[i].reparam[site] = {
                "r1": res.r1,
                "r2": res.r2,
                "z_tilde": res.z_tilde,
                "zero_point_residual": res.zero_point_residual,
                "zero_point_mode": res.zero_point_mode,
                "scale_reduction": cfg.scale_reduction,
            }
            method = "uniform-reparam"
            self._log("REPARAM", f"{layer_id}: s~={res.new_quant.scale[0]:.6g}, z~={res.new_quant.zero_point[0]:g}, "
                                 f"r1 in [{res.r1.min():.3g}, {res.r1.max():.3g}]")

        state.quantizers[(i, site)] = quantizer
        state.records[i].activations[site] = quantizer
        self._report(state, layer_id, "layernorm-act", method, pre_loss, post_loss, clip_stats, flags)

    def _generic_step(self, state: _RunState, calib: Tensor, i: int, sites: Tuple[str, ...]) -> None:
        collected = self._collect(state, calib, i, sites)
        for site in sites:
            self._guard(f"block{i}.{site}", "generic-act", self._generic_branch, state, i, site, collected[site])

    def _generic_branch(self, state: _RunState, i: int, site: str, x: Tensor) -> None:
        cfg = self.config
        minmax = widen_degenerate(calibrate_minmax(x, "layer"))
        baseline = params_from_range(minmax, cfg.act_bits, "layer")
        percentile = widen_degenerate(calibrate_percentile(x, "layer", cfg.percentile))
        params = params_from_range(percentile, cfg.act_bits, "layer")
        quantizer = ActivationQuantizer.from_uniform(params)
        state.quantizers[(i, site)] = quantizer
        state.records[i].activations[site] = quantizer
        self._log("CALIB", f"block{i}.{site}: percentile range [{percentile.lower[0]:.4g}, {percentile.upper[0]:.4g}]")
        self._report(state, f"block{i}.{site}", "generic-act", "uniform-percentile",
                     quant_mse(x, uniform_fake_quant(x, baseline)),
                     quant_mse(x, uniform_fake_quant(x, params)), {}, list(percentile.flags))

    def _softmax_step(self, state: _RunState, calib: Tensor, i: int) -> None:
        x = self._collect(state, calib, i, ["softmax"])["softmax"]
        self._guard(f"block{i}.softmax", "softmax-act", self._softmax_branch, state, i, x)

    def _softmax_branch(self, state: _RunState, i: int, x: Tensor) -> None:
        cfg = self.config
        bits = cfg.act_bits
        scale = float(np.max(x))
        uniform = params_from_range(widen_degenerate(calibrate_minmax(x, "layer")), bits, "layer")
        uniform_loss = quant_mse(x, uniform_fake_quant(x, uniform))

        if cfg.softmax_base == "uniform":
            quantizer = ActivationQuantizer.from_uniform(uniform)
            pre_loss = post_loss = uniform_loss
        elif cfg.softmax_base == "log2":
            log2 = LogQuantParams(scale=scale, base="two", bits=bits)
            quantizer = ActivationQuantizer.from_log(log2)
            pre_loss, post_loss = uniform_loss, quant_mse(x, log_fake_quant(x, log2))
        else:
            log2 = LogQuantParams(scale=scale, base="two", bits=bits)
            sqrt2 = LogQuantParams(scale=scale, base="sqrt_two", bits=bits)
            quantizer = ActivationQuantizer.from_log(sqrt2)
            pre_loss = quant_mse(x, log_fake_quant(x, log2))
            post_loss = quant_mse(x, quantizer.fake_quant(x))

        state.quantizers[(i, "softmax")] = quantizer
        state.records[i].activations["softmax"] = quantizer
        self._log("CALIB", f"block{i}.softmax: {quantizer.kind} scale {scale:.6g}")
        self._report(state, f"block{i}.softmax", "softmax-act", quantizer.kind, pre_loss, post_loss, {}, [])

    # weights

    def _weights_from_site(self, state: _RunState, calib: Tensor, i: int, site: str,
                           names: Tuple[str, ...]) -> None:
        inputs = self._collect(state, calib, i, [site], quantized_output=True)[site]
        self._guard(f"block{i}.{site}", "weight", self._quantize_weights, state, i, names, inputs)

    def _quantize_weights(self, state: _RunState, i: int, names: Tuple[str, ...], inputs: Tensor) -> None:
        """Quantize the layers fed by one site; they share one Hessian."""
        cfg = self.config
        hessian = accumulate_hessian(HessianAccumulator.empty(inputs.shape[-1]), inputs).hessian
        changes = {}
        for name in names:
            layer: LinearLayerParams = getattr(state.fp_blocks[i], name)
            layer_id = f"block{i}.{name}"
            if cfg.enable_gptq:
                gptq = GPTQ(layer, cfg.weight_bits, cfg.gptq_block_size, cfg.gptq_damp,
                            name=layer_id, verbose=self.verbose)
                result = gptq.quantize(hessian=hessian)
                codes, dequant, params = result.codes, result.dequant_weight, result.params
                pre_loss, post_loss, flags = result.rtn_proxy_loss, result.proxy_loss, list(result.flags)
                method = "gptq"
                if post_loss > pre_loss:
                    # error feedback lost to plain rounding on this Hessian
                    codes, dequant = rtn_quantize_layer(layer.weight, params)
                    post_loss = pre_loss
                    flags.append("rtn_fallback")
                    self._log("WARNING", f"{layer_id}: GPTQ proxy loss above RTN, keeping RTN")
            else:
                params = weight_params(layer.weight, cfg.weight_bits)
                codes, dequant = rtn_quantize_layer(layer.weight, params)
                pre_loss = post_loss = proxy_loss(layer.weight, dequant, hessian)
                flags, method = [], "rtn"
            state.records[i].weights[name] = WeightRecord(codes=codes, params=params, bias=layer.bias)
            changes[name] = LinearLayerParams(weight=dequant, bias=layer.bias)
            self._report(state, layer_id, "weight", method, pre_loss, post_loss, {}, flags)
        state.q_blocks[i] = replace(state.q_blocks[i], **changes)

    def _report(self, state: _RunState, layer_id: str, kind: str, method: str, pre_loss: float,
                post_loss: float, clip_stats: dict, flags) -> None:
        state.reports.append(LayerReport(
            layer_id=layer_id,
            kind=kind,
            method=method,
            pre_loss=float(max(pre_loss, 0.0)),
            post_loss=float(max(post_loss, 0.0)),
            clip_stats=clip_stats,
            flags=tuple(flags),
        ))


def run_pipeline(model: ToyModel, calib: Tensor, cfg: Optional[QuantConfig] = None,
                 verbose: bool = False) -> Tuple[QuantizedModel, List[LayerReport]]:
    """Quantize `model` on `calib` with `cfg`; see RepQuantPipeline.run."""
    return RepQuantPipeline(cfg, verbose=verbose).run(model, calib)
