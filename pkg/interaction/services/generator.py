"""
Frozen generator abstraction, the deterministic toy generator used at desk
scale, and everything that reads verbs back out of it: constrained decoding,
main-verb extraction and open-vocabulary mapping.
"""

import logging
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from interaction.exceptions import ConfigurationError, DimensionMismatchError, VocabularyError
from interaction.services.geometry import NO_INTERACTION
from interaction.services.layers import freeze, parameter_checksum, seeded_init
from interaction.services.steering import assemble_prefix

logger = logging.getLogger(__name__)

PAD_TOKEN = '<pad>'
EOS_TOKEN = '<eos>'
PAD_ID = 0
EOS_ID = 1

INQUIRY_TEMPLATE = "What is the person doing with the object?"

# words the toy generator can emit outside any verb phrase (open decoding)
FILLER_WORDS = (
    'a', 'the', 'near', 'beside', 'quietly', 'sitting', 'standing', 'holding', 'riding',
    'pushing', 'looking', 'lying', 'carrying', 'touching', 'next', 'to',
)

PREPOSITIONS = frozenset({
    'on', 'at', 'up', 'in', 'with', 'to', 'over', 'under', 'from', 'off', 'into', 'onto', 'by',
})

DECODE_MODES = ('phrase', 'token', 'open')

_WORD_RE = re.compile(r"\w+|[^\w\s]")


def split_words(text):
    return _WORD_RE.findall(text.lower())


class WordTokenizer:
    """
    Word-level tokenizer: lowercase, punctuation is its own token.
    Ids 0 and 1 are <pad> and <eos>.
    """

    def __init__(self, words):
        self.itos = [PAD_TOKEN, EOS_TOKEN]
        for word in words:
            if word not in self.itos:
                self.itos.append(word)
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def from_texts(cls, texts, extra_words=()):
        words = []
        for text in texts:
            words.extend(split_words(text))
        words.extend(extra_words)
        return cls(words)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, word):
        return word in self.stoi

    def encode(self, text):
        ids = []
        for word in split_words(text):
            if word not in self.stoi:
                raise VocabularyError(f"word '{word}' is not in the tokenizer vocabulary")
            ids.append(self.stoi[word])
        return ids

    def decode(self, ids):
        words = []
        for i in ids:
            i = int(i)
            if i == EOS_ID:
                break
            if i == PAD_ID:
                continue
            if not 0 <= i < len(self.itos):
                raise VocabularyError(f"token id {i} outside the tokenizer vocabulary")
            words.append(self.itos[i])
        text = ''
        for word in words:
            if text and re.match(r"\w", word):
                text += ' '
            text += word
        return text


def build_tokenizer(phrases, synonyms=None, extra_texts=()):
    texts = list(phrases) + list((synonyms or {}).keys()) + [INQUIRY_TEMPLATE] + list(extra_texts)
    return WordTokenizer.from_texts(texts, extra_words=FILLER_WORDS)


@dataclass(frozen=True)
class GenerationResult:
    candidate_id: int
    phrase: str
    verb: int
    score: float
    token_ids: tuple


class VerbVocabulary:
    """
    Canonical verb phrases V (id = position), their token ids, the verb-focused
    token mask and the synonym table.
    """

    def __init__(self, phrases, tokenizer, synonyms=None, auxiliaries=None):
        if not phrases:
            raise VocabularyError("verb vocabulary is empty")
        self.phrases = tuple(p.strip().lower() for p in phrases)
        if len(set(self.phrases)) != len(self.phrases):
            raise VocabularyError("duplicate verb phrases in the vocabulary")
        self.tokenizer = tokenizer
        self.phrase_tokens = tuple(tuple(tokenizer.encode(p)) for p in self.phrases)
        for phrase, tokens in zip(self.phrases, self.phrase_tokens):
            if not tokens:
                raise VocabularyError(f"verb phrase '{phrase}' has no tokens")

        if auxiliaries is None:
            auxiliaries = sorted({w for p in self.phrases for w in split_words(p) if w in PREPOSITIONS})
        self.auxiliaries = tuple(auxiliaries)

        mask = torch.zeros(len(tokenizer), dtype=torch.bool)
        for tokens in self.phrase_tokens:
            mask[list(tokens)] = True
        for word in self.auxiliaries:
            if word not in tokenizer:
                raise VocabularyError(f"auxiliary '{word}' is not in the tokenizer vocabulary")
            mask[tokenizer.stoi[word]] = True
        self.verb_token_mask = mask

        self.synonym_table = {p: i for i, p in enumerate(self.phrases)}
        for phrase, canonical in (synonyms or {}).items():
            canonical = canonical.strip().lower()
            if canonical not in self.phrases:
                raise VocabularyError(f"synonym '{phrase}' points at unknown verb '{canonical}'")
            self.synonym_table[phrase.strip().lower()] = self.phrases.index(canonical)

    @classmethod
    def from_files(cls, verbs_path, tokenizer=None, synonyms_path=None, auxiliaries=None):
        phrases = read_verb_file(verbs_path)
        synonyms = read_synonym_file(synonyms_path) if synonyms_path else {}
        tokenizer = tokenizer or build_tokenizer(phrases, synonyms)
        return cls(phrases, tokenizer, synonyms, auxiliaries)

    def __len__(self):
        return len(self.phrases)

    def verb_id(self, phrase):
        phrase = phrase.strip().lower()
        if phrase not in self.phrases:
            raise VocabularyError(f"unknown verb '{phrase}'")
        return self.phrases.index(phrase)

    def phrase(self, verb):
        if not 0 <= verb < len(self.phrases):
            raise VocabularyError(f"verb id {verb} outside the vocabulary")
        return self.phrases[verb]

    @property
    def first_token_ids(self):
        return [tokens[0] for tokens in self.phrase_tokens]

    def target_tokens(self, verb, append_eos=True):
        tokens = list(self.phrase_tokens[verb])
        return tokens + [EOS_ID] if append_eos else tokens


def read_verb_file(path):
    lines = Path(path).read_text(encoding='utf-8').splitlines()
    return [line.strip() for line in lines if line.strip()]


def read_synonym_file(path):
    table = {}
    for n, line in enumerate(Path(path).read_text(encoding='utf-8').splitlines()):
        if not line.strip():
            continue
        parts = line.split('\t')
        if len(parts) != 2:
            raise VocabularyError(f"{path}:{n + 1}: expected 'phrase<TAB>verb'")
        table[parts[0].strip().lower()] = parts[1].strip().lower()
    return table


class GeneratorInterface(ABC):
    """
    Contract a frozen generator has to satisfy.

    decode_step takes the embeddings of the new positions (B x S_new x d) and
    the state returned by the previous call (None at the start) and returns
    logits for every new position (B x S_new x vocab) plus the new state.
    """

    tokenizer = None

    @property
    @abstractmethod
    def hidden_size(self):
        ...

    @property
    @abstractmethod
    def scene_dim(self):
        ...

    @abstractmethod
    def embed_text(self, token_ids):
        ...

    @abstractmethod
    def encode_scene(self, raster):
        ...

    @abstractmethod
    def decode_step(self, embeddings, state=None):
        ...

    @abstractmethod
    def scene_attention(self, raster):
        ...

    @abstractmethod
    def checksum(self):
        ...


class ToyGenerator(nn.Module, GeneratorInterface):
    """
    Small fixed-weight causal transformer with a patch vision tower.
    Weights come from the seed only and are frozen on construction.
    """

    def __init__(self, tokenizer, seed=0, d=32, layers=2, heads=4, scene_dim=32,
                 patch_size=4, max_positions=128, max_patches=256):
        super().__init__()
        self.tokenizer = tokenizer
        self.seed = seed
        self.d = d
        self.patch_size = patch_size
        self.max_positions = max_positions
        self.max_patches = max_patches
        self._scene_dim = scene_dim
        vocab_size = len(tokenizer)

        with seeded_init(seed):
            self.token_embedding = nn.Embedding(vocab_size, d)
            self.position_embedding = nn.Parameter(0.02 * torch.randn(max_positions, d))
            layer = nn.TransformerEncoderLayer(d, heads, dim_feedforward=4 * d, dropout=0.0,
                                               activation='gelu', batch_first=True, norm_first=True)
            self.decoder = nn.TransformerEncoder(layer, layers, enable_nested_tensor=False)
            self.final_norm = nn.LayerNorm(d)
            self.lm_head = nn.Linear(d, vocab_size)

            self.patch_embed = nn.Linear(3 * patch_size * patch_size, scene_dim)
            self.patch_position = nn.Parameter(0.02 * torch.randn(max_patches, scene_dim))
            scene_layer = nn.TransformerEncoderLayer(scene_dim, heads, dim_feedforward=2 * scene_dim,
                                                     dropout=0.0, activation='gelu', batch_first=True,
                                                     norm_first=True)
            self.scene_encoder = nn.TransformerEncoder(scene_layer, 1, enable_nested_tensor=False)
            self.pool_query = nn.Parameter(torch.randn(scene_dim))
        freeze(self)

    def train(self, mode=True):
        # frozen for the lifetime of the run
        return super().train(False)

    @property
    def hidden_size(self):
        return self.d

    @property
    def scene_dim(self):
        return self._scene_dim

    @property
    def vocab_size(self):
        return self.lm_head.out_features

    def embed_text(self, token_ids):
        token_ids = torch.as_tensor(token_ids, dtype=torch.long)
        if token_ids.numel() and (token_ids.min() < 0 or token_ids.max() >= self.vocab_size):
            raise VocabularyError(f"token id outside [0, {self.vocab_size})")
        return self.token_embedding(token_ids)

    def _patches(self, raster):
        if raster.dim() != 3 or raster.shape[-1] != 3:
            raise DimensionMismatchError('scene raster channels', 3, raster.shape[-1])
        height, width, _ = raster.shape
        p = self.patch_size
        if height % p or width % p:
            raise ConfigurationError(f"raster {height}x{width} is not a multiple of patch size {p}")
        patches = F.unfold(raster.permute(2, 0, 1).unsqueeze(0), kernel_size=p, stride=p)
        patches = patches.squeeze(0).transpose(0, 1)
        if patches.shape[0] > self.max_patches:
            raise ConfigurationError(f"{patches.shape[0]} patches exceed the tower's {self.max_patches}")
        return patches

    def encode_scene(self, raster):
        """H x W x 3 raster -> P x scene_dim patch features (row-major patch grid)"""
        patches = self._patches(raster)
        x = self.patch_embed(patches) + self.patch_position[:patches.shape[0]]
        return self.scene_encoder(x.unsqueeze(0)).squeeze(0)

    def scene_attention(self, raster):
        """The encoder's own pooling attention over patches, as a (H/p) x (W/p) map"""
        features = self.encode_scene(raster)
        weights = torch.softmax(features @ self.pool_query / self._scene_dim ** 0.5, dim=0)
        height, width, _ = raster.shape
        return weights.view(height // self.patch_size, width // self.patch_size)

    def decode_step(self, embeddings, state=None):
        squeeze = embeddings.dim() == 2
        if squeeze:
            embeddings = embeddings.unsqueeze(0)
        if embeddings.shape[-1] != self.d:
            raise DimensionMismatchError('generator input', self.d, embeddings.shape[-1])
        sequence = embeddings if state is None else torch.cat([state, embeddings], dim=1)
        length = sequence.shape[1]
        if length > self.max_positions:
            raise ConfigurationError(f"sequence of {length} exceeds {self.max_positions} positions")

        x = sequence + self.position_embedding[:length].to(sequence.dtype)
        causal = nn.Transformer.generate_square_subsequent_mask(length, dtype=sequence.dtype)
        hidden = self.decoder(x, mask=causal, is_causal=True)
        logits = self.lm_head(self.final_norm(hidden))[:, length - embeddings.shape[1]:]
        if squeeze:
            logits = logits.squeeze(0)
        return logits, sequence

    def checksum(self):
        return parameter_checksum(self)


def toy_generator(seed=0, vocab_size=None, d=32, layers=2, tokenizer=None, **kwargs):
    """
    Build the toy generator. When vocab_size exceeds the tokenizer, the
    remaining ids become reserved <extra_i> tokens.
    """
    tokenizer = tokenizer or build_tokenizer(())
    if vocab_size is not None:
        if vocab_size < len(tokenizer):
            raise ConfigurationError(f"vocab_size {vocab_size} smaller than the tokenizer ({len(tokenizer)})")
        tokenizer = WordTokenizer(tokenizer.itos[2:] + [f'<extra_{i}>' for i in range(vocab_size - len(tokenizer))])
    generator = ToyGenerator(tokenizer, seed=seed, d=d, layers=layers, **kwargs)
    logger.debug(f"toy generator seed={seed} vocab={len(tokenizer)} d={d} checksum={generator.checksum()[:12]}")
    return generator


class PhraseTrie:
    """Prefix tree over the token sequences of the admitted verb phrases"""

    def __init__(self, sequences):
        self.children = {}
        self.terminals = set()
        for seq in sequences:
            seq = tuple(seq)
            for i in range(len(seq)):
                self.children.setdefault(seq[:i], set()).add(seq[i])
            self.terminals.add(seq)

    def __bool__(self):
        return bool(self.terminals)

    def allowed(self, prefix):
        ids = set(self.children.get(tuple(prefix), ()))
        if tuple(prefix) in self.terminals:
            ids.add(EOS_ID)
        return ids


def allowed_token_mask(vocab, mask=None, append_eos=True):
    """verb_token_mask (or an override) plus <eos>"""
    allowed = (vocab.verb_token_mask if mask is None else torch.as_tensor(mask, dtype=torch.bool)).clone()
    if append_eos:
        allowed[EOS_ID] = True
    return allowed


def decode_kernels(kernels, inquiry_tokens, vocab, gen, max_len=4, mode='phrase', mask=None,
                   candidate_ids=None):
    """
    Greedy decoding for a batch of kernels (B x L x d).

    phrase: each step admits only continuations of verb phrases made of masked-in tokens
    token:  each step admits verb_token_mask plus <eos>
    open:   everything except <pad>
    """
    if mode not in DECODE_MODES:
        raise ConfigurationError(f"unknown decode mode '{mode}'")
    if max_len <= 0:
        raise ConfigurationError("max_len must be positive")
    if kernels.dim() == 2:
        kernels = kernels.unsqueeze(0)
    batch = kernels.shape[0]
    candidate_ids = list(range(batch)) if candidate_ids is None else list(candidate_ids)
    vocab_size = len(vocab.tokenizer)

    base = allowed_token_mask(vocab, mask)
    if mode == 'open':
        base = torch.ones(vocab_size, dtype=torch.bool)
        base[PAD_ID] = False
    trie = None
    if mode == 'phrase':
        trie = PhraseTrie(t for t in vocab.phrase_tokens if bool(base[list(t)].all()))
        if not trie:
            raise ConfigurationError("decoding mask admits no complete verb phrase")
    elif not base[EOS_ID + 1:].any():
        raise ConfigurationError("decoding mask is empty")

    generated = [[] for _ in range(batch)]
    log_probs = [[] for _ in range(batch)]
    done = [False] * batch
    with torch.no_grad():
        prefix = assemble_prefix(kernels, inquiry_tokens, gen.embed_text)
        logits, state = gen.decode_step(prefix)
        for _ in range(max_len):
            step_logits = logits[:, -1]
            next_ids = []
            for b in range(batch):
                if done[b]:
                    next_ids.append(EOS_ID)
                    continue
                if trie is not None:
                    allowed = torch.zeros(vocab_size, dtype=torch.bool)
                    allowed[list(trie.allowed(generated[b]))] = True
                else:
                    allowed = base
                masked = step_logits[b].masked_fill(~allowed, float('-inf'))
                lp = torch.log_softmax(masked, dim=-1)
                token = int(torch.argmax(lp))
                log_probs[b].append(float(lp[token]))
                if token == EOS_ID:
                    done[b] = True
                else:
                    generated[b].append(token)
                next_ids.append(token)
            if all(done):
                break
            step = gen.embed_text(torch.tensor(next_ids)).unsqueeze(1).to(prefix.dtype)
            logits, state = gen.decode_step(step, state)

    results = []
    for b in range(batch):
        phrase = vocab.tokenizer.decode(generated[b])
        verb = extract_main_verb(phrase, vocab) if phrase else NO_INTERACTION
        score = sum(log_probs[b]) / len(log_probs[b])
        results.append(GenerationResult(candidate_ids[b], phrase, verb, score, tuple(generated[b])))
    return results


def constrained_decode(kernel, inquiry_tokens, vocab, gen, max_len=4, mode='phrase', mask=None,
                       candidate_id=0):
    return decode_kernels(kernel.unsqueeze(0) if kernel.dim() == 2 else kernel, inquiry_tokens,
                          vocab, gen, max_len=max_len, mode=mode, mask=mask,
                          candidate_ids=[candidate_id])[0]


def extract_main_verb(phrase, vocab):
    """
    Longest canonical phrase occurring as a contiguous word span.
    Ties: earliest start, then lowest verb id. No match -> NO_INTERACTION.
    """
    words = split_words(phrase)
    if not words:
        raise ConfigurationError("cannot extract a verb from an empty phrase")
    best = None
    for verb, canonical in enumerate(vocab.phrases):
        target = split_words(canonical)
        n = len(target)
        for start in range(len(words) - n + 1):
            if words[start:start + n] == target:
                key = (-n, start, verb)
                if best is None or key < best:
                    best = key
                break
    return NO_INTERACTION if best is None else best[2]


def phrase_embedding(token_ids, gen):
    return gen.embed_text(torch.as_tensor(list(token_ids), dtype=torch.long)).mean(dim=0)


def verb_embeddings(vocab, gen):
    """|V| x d frozen verb embeddings: mean of each phrase's token embeddings"""
    return torch.stack([phrase_embedding(tokens, gen) for tokens in vocab.phrase_tokens]).detach()


def open_vocab_map(phrase, vocab, gen, synonym_filter=False):
    """Canonical verb nearest (cosine) to a free-form phrase in the frozen embedding space"""
    words = [w for w in split_words(phrase) if w in vocab.tokenizer]
    if not words:
        return NO_INTERACTION
    with torch.no_grad():
        query = phrase_embedding([vocab.tokenizer.stoi[w] for w in words], gen)
        similarity = F.cosine_similarity(verb_embeddings(vocab, gen), query.unsqueeze(0), dim=-1)

    candidates = range(len(vocab))
    if synonym_filter:
        word_set = set(words)
        filtered = sorted({verb for syn, verb in vocab.synonym_table.items() if word_set & set(split_words(syn))})
        if filtered:
            candidates = filtered
    return max(candidates, key=lambda v: (float(similarity[v]), -v))
