"""Model backends: teacher-forced hidden states + next-token distributions.

A backend maps a batch of dataset items to, per item, the hidden state that
predicts each target position and the model's full-vocabulary next-token
distribution at that position. Two backends ship:

* `FreeEmbeddingBackend` - each (item, position) context owns an explicit
  embedding vector, and probabilities are softmax(W h). Useful as a fully
  transparent reference whose gradient behavior is known in closed form.
* `CausalLMBackend` - any Hugging Face causal LM. Hidden states come from
  the final (post-norm) layer output, i.e. the tensor the unembedding matrix
  actually multiplies; probabilities from the model's own logits.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass

import numpy as np

from .dataset import DatasetItem

log = logging.getLogger("actdump")


@dataclass
class ItemActivations:
    item: DatasetItem
    hidden: np.ndarray  # (T, d) float32
    probs: np.ndarray   # (T, |V|) float32, full model vocabulary


class FreeEmbeddingBackend:
    """Explicit per-context embeddings through a shared unembedding matrix."""

    def __init__(self, vocab_size: int, dim: int, seed: int = 0):
        self.vocab_size = vocab_size
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.W = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(vocab_size, dim))

    def context_embedding(self, item_id: str, k: int) -> np.ndarray:
        # Stable digest, not hash(): extraction must be identical across
        # processes regardless of hash randomization.
        h = zlib.crc32(f"{self.seed}:{item_id}:{k}".encode())
        rng = np.random.default_rng(h)
        return rng.normal(0.0, 1.0 / np.sqrt(self.dim), size=self.dim)

    def run_batch(self, items: list[DatasetItem]) -> list[ItemActivations]:
        out = []
        for item in items:
            T = len(item.target_tokens)
            H = np.stack([self.context_embedding(item.id, k) for k in range(T)])
            logits = H @ self.W.T
            logits -= logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            probs = e / e.sum(axis=1, keepdims=True)
            out.append(
                ItemActivations(
                    item=item, hidden=H.astype(np.float32), probs=probs.astype(np.float32)
                )
            )
        return out


class CausalLMBackend:
    """Teacher forcing through a Hugging Face causal language model.

    The predictor of target k sits at sequence position len(input) + k - 1,
    so every item needs at least one input token (a BOS id works).
    """

    def __init__(self, model, device: str = "cpu"):
        import torch

        self.torch = torch
        self.model = model.to(device).eval()
        self.device = device
        self.vocab_size = int(model.config.vocab_size)
        self.dim = int(model.config.hidden_size)

    @classmethod
    def random_gpt2(cls, vocab_size=128, dim=32, layers=2, heads=2, seed=0, device="cpu"):
        """Randomly initialized GPT-2 shape; no downloads, fixed seed."""
        import torch
        from transformers import GPT2Config, GPT2LMHeadModel

        torch.manual_seed(seed)
        config = GPT2Config(
            vocab_size=vocab_size,
            n_embd=dim,
            n_layer=layers,
            n_head=heads,
            n_positions=512,
            bos_token_id=0,
            eos_token_id=0,
        )
        return cls(GPT2LMHeadModel(config), device=device)

    def run_batch(self, items: list[DatasetItem]) -> list[ItemActivations]:
        torch = self.torch
        usable = []
        for item in items:
            if not item.input_tokens:
                log.warning("skipping %s: no input tokens to anchor teacher forcing", item.id)
                continue
            usable.append(item)
        if not usable:
            return []
        seqs = [item.input_tokens + item.target_tokens for item in usable]
        width = max(len(s) for s in seqs)
        ids = torch.zeros((len(seqs), width), dtype=torch.long)
        mask = torch.zeros((len(seqs), width), dtype=torch.long)
        for r, s in enumerate(seqs):
            ids[r, : len(s)] = torch.tensor(s, dtype=torch.long)
            mask[r, : len(s)] = 1
        with torch.no_grad():
            out = self.model(
                input_ids=ids.to(self.device),
                attention_mask=mask.to(self.device),
                output_hidden_states=True,
            )
        final_hidden = out.hidden_states[-1].float().cpu().numpy()
        probs = torch.softmax(out.logits.float(), dim=-1).cpu().numpy()
        result = []
        for r, item in enumerate(usable):
            start = len(item.input_tokens) - 1
            T = len(item.target_tokens)
            rows = slice(start, start + T)
            result.append(
                ItemActivations(
                    item=item,
                    hidden=final_hidden[r, rows].astype(np.float32),
                    probs=probs[r, rows].astype(np.float32),
                )
            )
        return result
