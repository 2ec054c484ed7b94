"""Convolutional seq2seq translator from masked question tokens to
masked SPARQL tokens.

Encoder and decoder embed tokens as word + learned positional embeddings
and stack conv + GLU + residual blocks; each decoder layer attends over
the encoder states with dot-product attention whose context is
``sum_j a_j (z_j + e_j) + d_i``. Output layer is softmax(W d_L + b) over
the target vocabulary; training minimizes label-smoothed cross-entropy
with an NAG optimizer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import Divergence, EmptyCorpus, InvalidGamma, TooLong

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"

SPARQL_KEYWORD_TOKENS = [
    "SELECT", "DISTINCT", "COUNT", "WHERE", "ASK", "{", "}", "(", ")", ".",
    ";", "rdf:type", "a", "?uri", "?x", "?y",
]


def placeholder_tokens(cap: int = 10) -> list[str]:
    return [f"<e{i}>" for i in range(cap)] + [f"<r{i}>" for i in range(cap)]


class Vocabulary:
    """Dense token ids with specials always present."""

    def __init__(self, tokens: list[str]):
        self.id_to_token: list[str] = []
        self.token_to_id: dict[str, int] = {}
        for tok in [PAD, BOS, EOS, UNK] + tokens:
            if tok not in self.token_to_id:
                self.token_to_id[tok] = len(self.id_to_token)
                self.id_to_token.append(tok)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def pad(self) -> int:
        return self.token_to_id[PAD]

    @property
    def bos(self) -> int:
        return self.token_to_id[BOS]

    @property
    def eos(self) -> int:
        return self.token_to_id[EOS]

    @property
    def unk(self) -> int:
        return self.token_to_id[UNK]

    def encode(self, tokens: list[str]) -> list[int]:
        unk = self.unk
        return [self.token_to_id.get(t, unk) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def content_hash(self) -> str:
        import hashlib

        return hashlib.sha256("\x00".join(self.id_to_token).encode()).hexdigest()[:16]

    def to_json(self) -> str:
        return json.dumps(self.id_to_token)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        vocab = cls.__new__(cls)
        vocab.id_to_token = list(json.loads(text))
        vocab.token_to_id = {tok: i for i, tok in enumerate(vocab.id_to_token)}
        return vocab


def build_vocab(
    pairs: list[tuple[list[str], list[str]]],
    min_count: int = 1,
    cap: int = 10,
) -> tuple[Vocabulary, Vocabulary]:
    """Frequency-then-lexicographic vocabularies for source and target.
    Placeholders and SPARQL keywords are always in the target."""
    if not pairs:
        raise EmptyCorpus("no masked pairs")

    def counted(side: int) -> list[str]:
        counts: dict[str, int] = {}
        for pair in pairs:
            for tok in pair[side]:
                counts[tok] = counts.get(tok, 0) + 1
        kept = [t for t, c in counts.items() if c >= min_count]
        return sorted(kept, key=lambda t: (-counts[t], t))

    src = Vocabulary(counted(0))
    tgt = Vocabulary(placeholder_tokens(cap) + SPARQL_KEYWORD_TOKENS + counted(1))
    return src, tgt


@dataclass
class Seq2SeqConfig:
    embed_dim: int = 64
    hidden_dim: int = 64
    kernel_width: int = 3
    encoder_layers: int = 4
    decoder_layers: int = 4
    max_positions: int = 128
    gamma: float = 0.9
    learning_rate: float = 0.25
    batch_size: int = 8
    max_epochs: int = 30
    seed: int = 0
    beam_size: int = 1

    def __post_init__(self):
        if self.kernel_width % 2 == 0:
            raise ValueError("kernel_width must be odd")
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ValueError("need at least one layer per stack")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class Seq2SeqModel:
    def __init__(self, config: Seq2SeqConfig, src_vocab: Vocabulary, tgt_vocab: Vocabulary):
        self.config = config
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(config.seed)
        E, H, k = config.embed_dim, config.hidden_dim, config.kernel_width
        Z = len(tgt_vocab)

        def par(name, shape, scl):
            self.params[name] = ad.parameter(rng.normal(0.0, scl, size=shape), name)

        par("src_embed", (len(src_vocab), E), 0.1)
        par("src_pos", (config.max_positions, E), 0.1)
        par("tgt_embed", (Z, E), 0.1)
        par("tgt_pos", (config.max_positions, E), 0.1)
        par("enc_in_W", (E, H), math.sqrt(1.0 / E))
        par("enc_in_b", (H,), 0.0)
        for layer in range(config.encoder_layers):
            par(f"enc{layer}_K", (k, H, 2 * H), math.sqrt(1.0 / (k * H)))
            par(f"enc{layer}_b", (2 * H,), 0.0)
        par("dec_in_W", (E, H), math.sqrt(1.0 / E))
        par("dec_in_b", (H,), 0.0)
        for layer in range(config.decoder_layers):
            par(f"dec{layer}_K", (k, H, 2 * H), math.sqrt(1.0 / (k * H)))
            par(f"dec{layer}_b", (2 * H,), 0.0)
        if E != H:
            par("bridge_W", (E, H), math.sqrt(1.0 / E))
        par("out_W", (H, Z), math.sqrt(1.0 / H))
        par("out_b", (Z,), 0.0)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p.value = snap[name].copy()


def _embed(model: Seq2SeqModel, table: str, pos_table: str, ids: list[int]) -> Tensor:
    if len(ids) > model.config.max_positions:
        raise TooLong(f"sequence of {len(ids)} exceeds max_positions")
    word = ad.embedding_lookup(model.params[table], ids)
    pos = ad.embedding_lookup(model.params[pos_table], np.arange(len(ids)))
    return ad.add(word, pos)


def encode(model: Seq2SeqModel, src_ids: list[int]) -> tuple[Tensor, Tensor]:
    """Run the encoder stack; returns (z final states, e input embeddings)."""
    e = _embed(model, "src_embed", "src_pos", src_ids)
    x = ad.add(ad.matmul(e, model.params["enc_in_W"]), model.params["enc_in_b"])
    for layer in range(model.config.encoder_layers):
        conv = ad.conv1d(x, model.params[f"enc{layer}_K"], model.params[f"enc{layer}_b"])
        x = ad.add(ad.glu(conv), x)
    return x, e


def _attention_inputs(model: Seq2SeqModel, z: Tensor, e: Tensor) -> Tensor:
    if model.config.embed_dim != model.config.hidden_dim:
        e = ad.matmul(e, model.params["bridge_W"])
    return ad.add(z, e)


def multi_step_attention(d_i: Tensor, z: Tensor, e: Tensor, model: Seq2SeqModel | None = None) -> tuple[Tensor, Tensor]:
    """Attention for one decoder state: a_j = softmax_j(d . z_j),
    c = sum_j a_j (z_j + e_j) + d. Accepts d_i of shape [H] or [n, H]."""
    single = d_i.value.ndim == 1
    d = Tensor(d_i.value.reshape(1, -1), (d_i,), lambda g: (g.reshape(d_i.value.shape),)) if single else d_i
    if model is not None:
        ze = _attention_inputs(model, z, e)
    else:
        ze = ad.add(z, e)
    a = ad.softmax(ad.matmul(d, ad.transpose(z)))
    c = ad.add(ad.matmul(a, ze), d)
    if single:
        a = ad.slice_rows(a, 0, 1)
        a = Tensor(a.value.reshape(-1), (a,), lambda g: (g.reshape(1, -1),))
        c = Tensor(c.value.reshape(-1), (c,), lambda g: (g.reshape(1, -1),))
    return a, c


def decoder_states(model: Seq2SeqModel, src_ids: list[int], tgt_in_ids: list[int]) -> Tensor:
    """Decoder stack over a (shifted) target prefix; causal by
    construction: left-padded convolutions and per-position attention."""
    z, e = encode(model, src_ids)
    ze = _attention_inputs(model, z, e)
    y = _embed(model, "tgt_embed", "tgt_pos", tgt_in_ids)
    d = ad.add(ad.matmul(y, model.params["dec_in_W"]), model.params["dec_in_b"])
    for layer in range(model.config.decoder_layers):
        conv = ad.conv1d(
            d, model.params[f"dec{layer}_K"], model.params[f"dec{layer}_b"], causal=True
        )
        h = ad.glu(conv)
        a = ad.softmax(ad.matmul(h, ad.transpose(z)))
        c = ad.add(ad.matmul(a, ze), h)
        d = ad.add(c, d)
    return d


def output_distribution(model: Seq2SeqModel, d_L: Tensor) -> Tensor:
    """softmax(W d_L + b) over the target vocabulary."""
    single = d_L.value.ndim == 1
    d = Tensor(d_L.value.reshape(1, -1), (d_L,), lambda g: (g.reshape(d_L.value.shape),)) if single else d_L
    p = ad.softmax(ad.add(ad.matmul(d, model.params["out_W"]), model.params["out_b"]))
    if single:
        p = Tensor(p.value.reshape(-1), (p,), lambda g: (g.reshape(1, -1),))
    return p


def forward(model: Seq2SeqModel, src_ids: list[int], tgt_in_ids: list[int]) -> Tensor:
    """Per-step output distributions, shape [len(tgt_in_ids), Z]."""
    return output_distribution(model, decoder_states(model, src_ids, tgt_in_ids))


def label_smoothed_loss(distributions: Tensor, target_ids, gamma: float) -> Tensor:
    """-(1/N) sum_n sum_z q(z) log P(z) with q = gamma on the target and
    (1-gamma)/(Z-1) elsewhere."""
    N, Z = distributions.value.shape
    if not (1.0 / Z) < gamma <= 1.0:
        raise InvalidGamma(f"gamma must be in (1/Z, 1], got {gamma} for Z={Z}")
    off = (1.0 - gamma) / (Z - 1)
    if off == 0.0:
        # pure cross-entropy; keep 0 * log(0) from poisoning the sum
        picked = ad.select_positions(distributions, target_ids)
        return ad.scale(ad.sum_all(ad.log(picked)), -1.0 / N)
    log_p = ad.log(distributions)
    target_term = ad.sum_all(ad.select_positions(log_p, target_ids))
    total_term = ad.sum_all(log_p)
    combined = ad.add(
        ad.scale(target_term, gamma - off), ad.scale(total_term, off)
    )
    return ad.scale(combined, -1.0 / N)


def example_loss(model: Seq2SeqModel, src_ids, tgt_ids, gamma: float) -> Tensor:
    tgt_in = [model.tgt_vocab.bos] + list(tgt_ids)
    tgt_out = list(tgt_ids) + [model.tgt_vocab.eos]
    return label_smoothed_loss(forward(model, src_ids, tgt_in), tgt_out, gamma)


def train_stage1(
    model: Seq2SeqModel,
    pairs: list[tuple[list[str], list[str]]],
    config: Seq2SeqConfig | None = None,
    epoch_callback=None,
) -> list[float]:
    """Train on masked (question, SPARQL) token pairs. Deterministic
    given the config seed; raises Divergence (with the last good
    snapshot attached) if the loss goes non-finite."""
    if config is None:
        config = model.config
    if not pairs:
        raise EmptyCorpus("no training pairs")
    encoded = [
        (model.src_vocab.encode(src), model.tgt_vocab.encode(tgt)) for src, tgt in pairs
    ]
    optimizer = ad.NAGOptimizer(model.params, config.learning_rate)
    rng = np.random.default_rng(config.seed)
    loss_log: list[float] = []
    last_good = model.snapshot()
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(encoded))
        epoch_losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            grads: dict[str, np.ndarray] | None = None
            batch_loss = 0.0
            for idx in batch:  # fixed accumulation order keeps runs bit-identical
                src_ids, tgt_ids = encoded[idx]
                loss = example_loss(model, src_ids, tgt_ids, config.gamma)
                g = ad.backward(loss, model.params)
                batch_loss += float(loss.value)
                if grads is None:
                    grads = g
                else:
                    for name in grads:
                        grads[name] += g[name]
            n = len(batch)
            grads = {name: g / n for name, g in grads.items()}
            batch_loss /= n
            if not np.isfinite(batch_loss):
                raise Divergence(f"non-finite loss at epoch {epoch}", last_good)
            optimizer.step(grads)
            epoch_losses.append(batch_loss)
        mean_loss = float(np.mean(epoch_losses))
        if not np.isfinite(mean_loss):
            raise Divergence(f"non-finite epoch loss at epoch {epoch}", last_good)
        last_good = model.snapshot()
        loss_log.append(mean_loss)
        if epoch_callback is not None:
            epoch_callback(epoch, mean_loss)
    return loss_log


def _allowed_mask(model: Seq2SeqModel) -> np.ndarray:
    blocked = np.zeros(len(model.tgt_vocab), dtype=bool)
    for tok_id in (model.tgt_vocab.pad, model.tgt_vocab.bos, model.tgt_vocab.unk):
        blocked[tok_id] = True
    return blocked


def decode(
    model: Seq2SeqModel,
    src_ids: list[int],
    max_len: int = 60,
    beam_size: int | None = None,
) -> list[str]:
    """Greedy (beam_size=1) or length-normalized beam decoding. pad/bos/
    unk are never emitted; ties break toward the lower token id."""
    if beam_size is None:
        beam_size = model.config.beam_size
    max_len = min(max_len, model.config.max_positions - 1)
    blocked = _allowed_mask(model)
    eos = model.tgt_vocab.eos
    if beam_size <= 1:
        out: list[int] = []
        for _ in range(max_len):
            p = forward(model, src_ids, [model.tgt_vocab.bos] + out).value[-1]
            p = p.copy()
            p[blocked] = -1.0
            token = int(np.argmax(p))
            if token == eos:
                break
            out.append(token)
        return model.tgt_vocab.decode(out)

    # beam search over log-probabilities, scored by mean log-prob
    beams: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[tuple[list[int], float]] = []
    for _ in range(max_len):
        candidates: list[tuple[float, list[int], float]] = []
        for seq, logp in beams:
            p = forward(model, src_ids, [model.tgt_vocab.bos] + seq).value[-1]
            with np.errstate(divide="ignore"):
                lp = np.log(p)
            lp[blocked] = -np.inf
            top = np.argsort(-lp, kind="stable")[: beam_size + 1]
            for token in top:
                token = int(token)
                score = logp + float(lp[token])
                if token == eos:
                    finished.append((seq, score))
                else:
                    candidates.append((-score, seq + [token], score))
        if not candidates:
            break
        candidates.sort(key=lambda c: (c[0], c[1]))
        beams = [(seq, score) for _neg, seq, score in candidates[:beam_size]]
    finished.extend((seq, logp) for seq, logp in beams)

    def normalized(item):
        seq, logp = item
        return logp / max(len(seq) + 1, 1)

    best = max(reversed(finished), key=normalized)
    return model.tgt_vocab.decode(best[0])


def exact_match_rate(
    model: Seq2SeqModel, pairs: list[tuple[list[str], list[str]]], max_len: int = 60
) -> float:
    hits = 0
    for src, tgt in pairs:
        predicted = decode(model, model.src_vocab.encode(src), max_len=max_len, beam_size=1)
        hits += predicted == tgt
    return hits / len(pairs) if pairs else 0.0
