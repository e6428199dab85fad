"""End-to-end model: question-conditioned visual features feeding a toy LM.

Pipeline per sample: encode the question, pool the image grid into
multi-scale rows, fuse (text as queries), fold back onto the patch tokens
through the gate, then decode answer logits with the visual prefix. The
training loss couples the sequence NLL with the queue-based semantic loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import LMConfig, ToyDecoderLM, nll_loss
from .encoders import BOS, EOS, FeatureMap, TextEncoder, Vocabulary, sinusoid_rows
from .errors import ParameterError, ShapeError
from .fusion import ConditionedVisualFeatures, FusionConfig, FusionDecoder, GateState, gate_combine
from .pyramid import extract_multiscale
from .semantic import SemanticDistribution, TextQueue, pool_semantic, semantic_distribution, semantic_loss, total_loss
from .tensor import Parameter, Tensor


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 16
    grid: int = 8
    scales: int = 3
    fusion_layers: int = 2
    fusion_heads: int = 2
    fusion_ffn: int = 32
    lm_layers: int = 2
    lm_heads: int = 2
    lm_ffn: int = 32
    max_seq_len: int = 128
    encoder_depth: int = 2
    queue_tau: float = 0.07

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(self.fusion_layers, self.fusion_heads, self.dim, self.fusion_ffn)

    def lm_config(self, vocab_size: int) -> LMConfig:
        return LMConfig(self.lm_layers, self.lm_heads, self.dim, vocab_size,
                        self.max_seq_len, self.lm_ffn)


class VqaModel:
    """Holds every parameter and runs the full differentiable pipeline."""

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, seed: int = 0):
        self.cfg = cfg
        self.vocab = vocab
        rng = np.random.default_rng(seed)
        self.embedding = Parameter(rng.normal(0.0, cfg.dim**-0.5, (len(vocab), cfg.dim)),
                                   "embedding.table", "embedding")
        self.encoder = TextEncoder(self.embedding, cfg.dim, rng, depth=cfg.encoder_depth)
        self.fusion = FusionDecoder(cfg.fusion_config(), rng)
        self.gate = GateState(cfg.dim, rng)
        self.lm = ToyDecoderLM(cfg.lm_config(len(vocab)), self.embedding, rng)
        self._params = {}
        for p in ([self.embedding] + self.encoder.params() + self.fusion.params()
                  + self.gate.params() + self.lm.params()):
            if p.name in self._params:
                raise ParameterError(f"duplicate parameter name {p.name}")
            self._params[p.name] = p
        self._text_pos = sinusoid_rows(cfg.max_seq_len, cfg.dim)

    # -- parameter registry ------------------------------------------------

    def params(self) -> list:
        return list(self._params.values())

    def param(self, name: str) -> Parameter:
        return self._params[name]

    def params_in_groups(self, groups) -> list:
        groups = set(groups)
        return [p for p in self._params.values() if p.group in groups]

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    # -- forward pieces ------------------------------------------------------

    def encode_question(self, question_ids) -> Tensor:
        """Position-free text features for the semantic anchor."""
        return self.encoder.encode(question_ids)

    def condition_visual(self, fmap: FeatureMap, question_ids):
        """Returns (conditioned visual tokens, per-layer cross attention, text features)."""
        if fmap.dim != self.cfg.dim:
            raise ShapeError(f"feature width {fmap.dim} != model width {self.cfg.dim}")
        text = self.encode_question(question_ids)
        positioned = text + self._text_pos[:text.data.shape[0]]
        memory = extract_multiscale(fmap.grid, self.cfg.scales)
        fused, attn_maps = self.fusion.fuse(positioned, memory)
        conditioned = gate_combine(fmap, fused, self.gate)
        return conditioned, attn_maps, text

    def encode_queue(self, caption_ids_list, tau: float | None = None) -> TextQueue:
        """Encode caption token lists and mean-pool each into a queue entry.

        Entries are detached: the queue is a fixed reference set per step, so
        the alignment loss moves the anchors, not the reference texts.
        """
        entries = [pool_semantic(self.encoder.encode(ids)).detach()
                   for ids in caption_ids_list]
        return TextQueue(entries, self.cfg.queue_tau if tau is None else tau)

    def semantic_pair(self, conditioned: ConditionedVisualFeatures, text: Tensor,
                      queue: TextQueue):
        pv = semantic_distribution(pool_semantic(conditioned.matrix), queue)
        pt = semantic_distribution(pool_semantic(text), queue)
        return pv, pt

    # -- losses ---------------------------------------------------------------

    def answer_nll(self, conditioned: ConditionedVisualFeatures, question_ids, answer_ids):
        """Answer-only supervision: loss on answer tokens plus the closing eos."""
        question_ids = list(question_ids)
        answer_ids = list(answer_ids)
        text_in = [BOS] + question_ids + answer_ids
        targets = question_ids + answer_ids + [EOS]
        n_prompt = len(question_ids)
        mask = [i >= n_prompt for i in range(len(targets))]
        logits = self.lm.decode_logits(conditioned.matrix, text_in)
        return nll_loss(logits, targets, mask)

    def sample_losses(self, fmap: FeatureMap, question_ids, answer_ids,
                      caption_ids_list, sem_weight: float):
        """Per-sample (total, semantic, nll) graph nodes for the joint objective."""
        conditioned, attn_maps, text = self.condition_visual(fmap, question_ids)
        l_nll = self.answer_nll(conditioned, question_ids, answer_ids)
        queue = self.encode_queue(caption_ids_list)
        pv, pt = self.semantic_pair(conditioned, text, queue)
        l_sem = semantic_loss(pv, pt)
        l_total = total_loss(l_sem, l_nll, sem_weight)
        return l_total, l_sem, l_nll

    # -- inference -------------------------------------------------------------

    def answer_greedy(self, fmap: FeatureMap, question_ids, max_new: int = 6) -> list:
        conditioned, _, _ = self.condition_visual(fmap, question_ids)
        return self.lm.greedy_decode(conditioned.matrix, [BOS] + list(question_ids),
                                     EOS, max_new=max_new)

    def attention_for(self, fmap: FeatureMap, question_ids):
        _, attn_maps, _ = self.condition_visual(fmap, question_ids)
        return attn_maps
