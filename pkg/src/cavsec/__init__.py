"""cavsec: attribute-based end-to-end security for connected-vehicle networks.

Building blocks:

  group      prime-order subgroup arithmetic and parameter generation
  abe        hidden-policy attribute-based encryption with an outsourced
             encryption pipeline and constant-exponentiation decryption
  ibs        identity-based signatures with offline precomputation,
             outsourced nonce exponentiation and batch verification
  symcrypto  MAC / AEAD / KDF profiles for the two network segments
  tokens     pseudo-identities and layered authentication tokens
  protocol   entity state machines for the four-phase data-sharing protocol
  simnet     deterministic event-driven network with adversary taps
  bench      primitive benchmarks and operation-count audits (see the
             ``cavsec`` CLI)

Not production cryptography: arithmetic is not constant-time and parameters
default to a reduced test profile.
"""

from .counters import COUNTERS, CounterSnapshot
from .group import (
    GroupElement,
    GroupError,
    GroupParams,
    Scalar,
    SecurityProfile,
    generate_params,
    make_params,
    toy_params,
)
from .rng import Drbg, ScriptedRng
from .abe import (
    AbeCiphertext,
    AbeMasterKeys,
    AbeUserKey,
    EncryptionMaterial,
    PartialCiphertext,
    Policy,
    PreliminaryCiphertext,
    abe_decrypt,
    abe_encrypt,
    abe_keygen,
    abe_out_encrypt1,
    abe_out_encrypt2,
    abe_select_policy,
    abe_setup,
)
from .ibs import (
    IbsMasterKeys,
    IbsSignature,
    IbsSigningKey,
    OfflineSignState,
    ibs_batch_verify,
    ibs_keygen,
    ibs_offline_sign,
    ibs_out_sign1,
    ibs_out_sign2,
    ibs_setup,
    ibs_sign,
    ibs_verify,
)
from .symcrypto import IntegrityError, KeyRole, Profile, SymKey, kdf, prf, sym_decrypt, sym_encrypt
from .tokens import (
    CnToken,
    PseudoIdentity,
    Reject,
    UserToken,
    derive_user_token,
    issue_cn_token,
    make_pid,
    recover_pid,
    verify_cn_token,
    verify_user_token,
)

__version__ = "0.1.0"
