"""This module defines the sequence-encoder contract (token sequence in, [CLS]
hidden representation out), a deterministic miniature self-attention encoder
for desk-scale runs, and an adapter for pretrained cross-lingual encoders.

Everything downstream (classifier, transfer, evaluation) depends on the
``SequenceEncoder`` contract only, so ``MiniEncoder`` and ``PretrainedEncoder``
are interchangeable.
"""

import functools
import hashlib
import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import torch
from torch import nn

from .common import EncoderError, config_fingerprint, seeded

logger = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
N_RESERVED = 3
DEFAULT_VOCAB_SIZE = 5000
DEFAULT_MAX_LEN = 512


@dataclass(frozen=True)
class TokenSequence:
    """A tokenized text whose first id is the CLS marker.

    Attributes:
        ids (Tuple[int, ...]): The token ids, CLS first.
        cls_id (int): The CLS marker id of the producing tokenizer.
    """

    ids: Tuple[int, ...]
    cls_id: int = CLS_ID

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if not self.ids or self.ids[0] != self.cls_id:
            raise EncoderError("token sequence must start with the CLS id")

    def __len__(self) -> int:
        return len(self.ids)


class HashTokenizer:
    """Whitespace tokenizer hashing tokens into a fixed vocabulary.

    Ids 0, 1 and 2 are reserved for PAD, UNK and CLS; every token hashes into
    ``[3, vocab_size)``. The same token gets the same id in every language,
    which gives the synthetic corpora a shared multilingual vocabulary.

    Args:
        vocab_size (int, optional): The vocabulary size. Defaults to 5000.
        seed (int, optional): The hash seed. Defaults to 0.
    """

    def __init__(self, vocab_size: int = DEFAULT_VOCAB_SIZE, seed: int = 0):
        if vocab_size <= N_RESERVED:
            raise EncoderError(f"vocab_size must exceed {N_RESERVED}, got {vocab_size}")
        self.vocab_size = vocab_size
        self.seed = seed

    def token_id(self, token: str) -> int:
        digest = hashlib.blake2b(
            f"{self.seed}\x00{token}".encode("utf-8"), digest_size=8
        ).digest()
        return N_RESERVED + int.from_bytes(digest, "little") % (self.vocab_size - N_RESERVED)

    def __call__(self, text: str, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
        if max_len < 2:
            raise ValueError(f"max_len must be at least 2, got {max_len}")
        ids = [CLS_ID]
        for token in text.split():
            if len(ids) >= max_len:
                break
            ids.append(self.token_id(token))
        return TokenSequence(tuple(ids))


def tokenize(
    text: str,
    max_len: int = DEFAULT_MAX_LEN,
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    seed: int = 0,
) -> TokenSequence:
    """Tokenizes a text with the desk-scale hash tokenizer.

    Sequences longer than ``max_len`` keep their head and drop their tail.

    Args:
        text (str): The text. An empty text yields the CLS-only sequence.
        max_len (int, optional): The maximum sequence length, at least 2.
            Defaults to 512.
        vocab_size (int, optional): The vocabulary size. Defaults to 5000.
        seed (int, optional): The hash seed. Defaults to 0.

    Returns:
        TokenSequence: The token ids, CLS first.
    """
    return HashTokenizer(vocab_size, seed)(text, max_len)


@dataclass(frozen=True)
class MiniEncoderConfig:
    """Architecture of the miniature encoder."""

    vocab_size: int = DEFAULT_VOCAB_SIZE
    hidden_size: int = 16
    num_layers: int = 2
    num_heads: int = 2
    ff_size: int = 32
    max_len: int = DEFAULT_MAX_LEN
    hash_seed: int = 0

    def validate(self) -> "MiniEncoderConfig":
        for name in ("hidden_size", "num_layers", "num_heads", "ff_size"):
            if getattr(self, name) < 1:
                raise EncoderError(f"invalid dimensions: {name} must be >= 1")
        if self.vocab_size <= N_RESERVED:
            raise EncoderError(f"invalid dimensions: vocab_size must exceed {N_RESERVED}")
        if self.max_len < 2:
            raise EncoderError("invalid dimensions: max_len must be >= 2")
        if self.hidden_size % self.num_heads:
            raise EncoderError(
                "invalid dimensions: hidden_size must be divisible by num_heads"
            )
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": "mini", **asdict(self)}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "MiniEncoderConfig":
        d = {k: v for k, v in d.items() if k != "kind"}
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise EncoderError(f"unknown mini encoder settings: {sorted(unknown)}")
        return cls(**d)

    def fingerprint(self) -> str:
        return config_fingerprint(self.to_dict())


class SequenceEncoder(nn.Module):
    """Contract for encoders producing a [CLS] representation.

    Subclasses set ``cls_id`` and ``pad_id`` and implement ``config``,
    ``hidden_size``, ``vocab_size``, ``max_len``, ``tokenize``, ``forward``
    and ``expected_shapes``.
    """

    cls_id: int = CLS_ID
    pad_id: int = PAD_ID

    @property
    def config(self) -> Dict[str, Any]:
        raise NotImplementedError

    @property
    def hidden_size(self) -> int:
        raise NotImplementedError

    @property
    def vocab_size(self) -> int:
        raise NotImplementedError

    @property
    def max_len(self) -> int:
        raise NotImplementedError

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.config)

    def tokenize(self, text: str, max_len: Optional[int] = None) -> TokenSequence:
        raise NotImplementedError

    def expected_shapes(self) -> Dict[str, Tuple[int, ...]]:
        raise NotImplementedError

    def check_shapes(self) -> None:
        """Raises EncoderError if a parameter shape disagrees with the config."""
        expected = self.expected_shapes()
        actual = {k: tuple(v.shape) for k, v in self.state_dict().items()}
        if actual != expected:
            bad = sorted(k for k in set(actual) | set(expected) if actual.get(k) != expected.get(k))
            raise EncoderError(f"encoder state does not match its config: {bad[:5]}")


class MiniEncoder(SequenceEncoder):
    """A small post-norm self-attention encoder with learned positions.

    Args:
        config (MiniEncoderConfig): The architecture.
    """

    def __init__(self, config: MiniEncoderConfig):
        super().__init__()
        self._config = config.validate()
        self.tokenizer = HashTokenizer(config.vocab_size, config.hash_seed)
        self.token_embeddings = nn.Embedding(config.vocab_size, config.hidden_size)
        self.position_embeddings = nn.Embedding(config.max_len, config.hidden_size)
        self.layers = nn.ModuleList(
            nn.TransformerEncoderLayer(
                d_model=config.hidden_size,
                nhead=config.num_heads,
                dim_feedforward=config.ff_size,
                dropout=0.0,
                activation="gelu",
                batch_first=True,
            )
            for _ in range(config.num_layers)
        )

    @property
    def architecture(self) -> MiniEncoderConfig:
        return self._config

    @property
    def config(self) -> Dict[str, Any]:
        return self._config.to_dict()

    @property
    def hidden_size(self) -> int:
        return self._config.hidden_size

    @property
    def vocab_size(self) -> int:
        return self._config.vocab_size

    @property
    def max_len(self) -> int:
        return self._config.max_len

    def tokenize(self, text: str, max_len: Optional[int] = None) -> TokenSequence:
        limit = self.max_len if max_len is None else min(max_len, self.max_len)
        return self.tokenizer(text, limit)

    def expected_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return _mini_shapes(self._config)

    def forward(
        self, input_ids: torch.Tensor, attention_mask: Optional[torch.Tensor] = None
    ) -> torch.Tensor:
        """Encodes a padded batch.

        Args:
            input_ids (torch.Tensor): Token ids of shape (batch, length).
            attention_mask (torch.Tensor, optional): Bool mask, True for real
                tokens. Defaults to all non-PAD positions.

        Returns:
            torch.Tensor: The final-layer CLS states, shape (batch, hidden_size).
        """
        if attention_mask is None:
            attention_mask = input_ids != self.pad_id
        positions = torch.arange(input_ids.shape[1], device=input_ids.device)
        x = self.token_embeddings(input_ids) + self.position_embeddings(positions)[None]
        padding = ~attention_mask.bool()
        for layer in self.layers:
            x = layer(x, src_key_padding_mask=padding)
        return x[:, 0]


@functools.lru_cache(maxsize=32)
def _mini_shapes(config: MiniEncoderConfig) -> Dict[str, Tuple[int, ...]]:
    with torch.device("meta"):
        reference = MiniEncoder(config)
    return {k: tuple(v.shape) for k, v in reference.state_dict().items()}


class PretrainedEncoder(SequenceEncoder):
    """Adapter for pretrained cross-lingual encoders from the transformers hub.

    Works with XLM-R (``xlm-roberta-base``, ``xlm-roberta-large``) and
    multilingual BERT (``bert-base-multilingual-cased``). The representation
    is the final hidden state at the first position.

    Args:
        model_name (str): The hub model name or a local path.
        max_len (int, optional): The maximum sequence length. Defaults to 512.
        pretrained_weights (bool, optional): Load the published weights. When
            False, the architecture is built from its config only, to be filled
            from a checkpoint. Defaults to True.
    """

    def __init__(
        self, model_name: str, max_len: int = DEFAULT_MAX_LEN, pretrained_weights: bool = True
    ):
        super().__init__()
        from transformers import AutoConfig, AutoModel, AutoTokenizer

        self.model_name = model_name
        self._max_len = max_len
        self.hf_tokenizer = AutoTokenizer.from_pretrained(model_name)
        if pretrained_weights:
            self.model = AutoModel.from_pretrained(model_name, add_pooling_layer=False)
        else:
            self.model = AutoModel.from_config(
                AutoConfig.from_pretrained(model_name), add_pooling_layer=False
            )
        self.cls_id = self.hf_tokenizer.cls_token_id
        self.pad_id = self.hf_tokenizer.pad_token_id
        self._shapes: Optional[Dict[str, Tuple[int, ...]]] = None
        logger.info(
            "loaded %s (%s weights, H=%d)",
            model_name,
            "pretrained" if pretrained_weights else "uninitialized",
            self.hidden_size,
        )

    @property
    def config(self) -> Dict[str, Any]:
        return {
            "kind": "pretrained",
            "model_name": self.model_name,
            "max_len": self._max_len,
            "hidden_size": self.hidden_size,
        }

    @property
    def hidden_size(self) -> int:
        return int(self.model.config.hidden_size)

    @property
    def vocab_size(self) -> int:
        return int(self.model.config.vocab_size)

    @property
    def max_len(self) -> int:
        return self._max_len

    def tokenize(self, text: str, max_len: Optional[int] = None) -> TokenSequence:
        limit = self.max_len if max_len is None else min(max_len, self.max_len)
        ids = self.hf_tokenizer(text, truncation=True, max_length=limit)["input_ids"]
        return TokenSequence(tuple(ids), cls_id=self.cls_id)

    def expected_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Parameter shapes of the configured architecture, built once on the meta device."""
        if self._shapes is None:
            from transformers import AutoModel

            with torch.device("meta"):
                reference = AutoModel.from_config(self.model.config, add_pooling_layer=False)
            self._shapes = {
                f"model.{k}": tuple(v.shape) for k, v in reference.state_dict().items()
            }
        return dict(self._shapes)

    def forward(
        self, input_ids: torch.Tensor, attention_mask: Optional[torch.Tensor] = None
    ) -> torch.Tensor:
        if attention_mask is None:
            attention_mask = input_ids != self.pad_id
        out = self.model(input_ids=input_ids, attention_mask=attention_mask.long())
        return out.last_hidden_state[:, 0]


def init_mini_encoder(
    config: Union[MiniEncoderConfig, Dict[str, Any], None] = None, seed: int = 0
) -> MiniEncoder:
    """Builds a miniature encoder with seeded, deterministic initialization.

    Args:
        config (MiniEncoderConfig | dict, optional): The architecture. Defaults
            to ``MiniEncoderConfig()``.
        seed (int, optional): The initialization seed. Defaults to 0.

    Raises:
        EncoderError: If a dimension is invalid.

    Returns:
        MiniEncoder: The encoder; its fingerprint is that of ``config``.
    """
    if config is None:
        config = MiniEncoderConfig()
    elif isinstance(config, dict):
        config = MiniEncoderConfig.from_dict(config)
    config.validate()
    with seeded(seed):
        return MiniEncoder(config)


def build_encoder(config: Dict[str, Any], seed: int = 0) -> SequenceEncoder:
    """Builds a fresh encoder from a config dictionary.

    Args:
        config (dict): ``{"kind": "mini", ...}`` or ``{"kind": "pretrained",
            "model_name": ..., "max_len": ...}``.
        seed (int, optional): The initialization seed for mini encoders. Defaults to 0.

    Returns:
        SequenceEncoder: The encoder.
    """
    kind = config.get("kind", "mini")
    if kind == "mini":
        return init_mini_encoder(MiniEncoderConfig.from_dict(config), seed)
    if kind == "pretrained":
        return PretrainedEncoder(
            config["model_name"], max_len=int(config.get("max_len", DEFAULT_MAX_LEN))
        )
    raise EncoderError(f"unknown encoder kind {kind!r}")


def encoder_from_state(config: Dict[str, Any], state: Dict[str, torch.Tensor]) -> SequenceEncoder:
    """Rebuilds an encoder from its config and parameter tensors.

    Args:
        config (dict): The encoder config, as stored in checkpoints.
        state (Dict[str, torch.Tensor]): The parameter tensors.

    Raises:
        EncoderError: If the tensors do not fit the config.

    Returns:
        SequenceEncoder: The encoder holding exactly ``state``.
    """
    kind = config.get("kind", "mini")
    with seeded(0):
        if kind == "mini":
            encoder = MiniEncoder(MiniEncoderConfig.from_dict(config))
        elif kind == "pretrained":
            encoder = PretrainedEncoder(
                config["model_name"],
                max_len=int(config.get("max_len", DEFAULT_MAX_LEN)),
                pretrained_weights=False,
            )
        else:
            raise EncoderError(f"unknown encoder kind {kind!r}")
    if encoder.config != config:
        raise EncoderError("rebuilt encoder config differs from the stored config")
    expected = encoder.expected_shapes()
    actual = {k: tuple(v.shape) for k, v in state.items()}
    missing = [k for k in expected if k not in actual]
    unexpected = [k for k in actual if k not in expected]
    wrong = [k for k in actual if k in expected and actual[k] != expected[k]]
    if missing or unexpected or wrong:
        raise EncoderError(
            f"encoder state does not match its config (missing {missing[:5]}, "
            f"unexpected {unexpected[:5]}, wrong shape {wrong[:5]})"
        )
    encoder.load_state_dict(state)
    return encoder


def pad_batch(
    encoder: SequenceEncoder, sequences: Sequence[TokenSequence]
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Pads token sequences into a batch.

    Args:
        encoder (SequenceEncoder): The encoder whose PAD id is used.
        sequences (Sequence[TokenSequence]): The sequences.

    Returns:
        Tuple[torch.Tensor, torch.Tensor]: ``input_ids`` (long) and
            ``attention_mask`` (bool, True for real tokens), shape (batch, length).
    """
    length = max(len(s) for s in sequences)
    input_ids = torch.full((len(sequences), length), encoder.pad_id, dtype=torch.long)
    attention_mask = torch.zeros((len(sequences), length), dtype=torch.bool)
    for i, seq in enumerate(sequences):
        input_ids[i, : len(seq)] = torch.tensor(seq.ids, dtype=torch.long)
        attention_mask[i, : len(seq)] = True
    return input_ids, attention_mask


def check_token_ids(encoder: SequenceEncoder, input_ids: torch.Tensor) -> None:
    """Raises EncoderError on ids outside the vocabulary or overlong sequences."""
    if input_ids.numel() and (
        int(input_ids.min()) < 0 or int(input_ids.max()) >= encoder.vocab_size
    ):
        raise EncoderError(
            f"token id out of vocabulary (vocab size {encoder.vocab_size})"
        )
    if input_ids.shape[-1] > encoder.max_len:
        raise EncoderError(
            f"sequence length {input_ids.shape[-1]} exceeds max_len {encoder.max_len}"
        )


def encode(encoder: SequenceEncoder, tokens: TokenSequence) -> torch.Tensor:
    """Computes the [CLS] representation of one token sequence.

    Runs in inference mode; the result is a deterministic function of the
    encoder state and the tokens.

    Args:
        encoder (SequenceEncoder): The encoder.
        tokens (TokenSequence): The token sequence.

    Raises:
        EncoderError: On out-of-vocabulary ids, a state/config shape mismatch,
            or non-finite output.

    Returns:
        torch.Tensor: The hidden representation, shape (hidden_size,).
    """
    encoder.check_shapes()
    input_ids = torch.tensor([tokens.ids], dtype=torch.long)
    check_token_ids(encoder, input_ids)
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            h = encoder(input_ids, torch.ones_like(input_ids, dtype=torch.bool))[0]
    finally:
        encoder.train(was_training)
    if not torch.isfinite(h).all():
        raise EncoderError("encoder produced non-finite values")
    return h


def encoder_state(encoder: SequenceEncoder) -> Dict[str, torch.Tensor]:
    """Returns detached copies of the encoder's tensors, keyed by name."""
    return {k: v.detach().clone() for k, v in encoder.state_dict().items()}


def same_state(a: SequenceEncoder, b: SequenceEncoder) -> bool:
    """Tells whether two encoders hold bitwise-equal tensors under one config."""
    if a.config != b.config:
        return False
    sa, sb = a.state_dict(), b.state_dict()
    return sa.keys() == sb.keys() and all(torch.equal(sa[k], sb[k]) for k in sa)
