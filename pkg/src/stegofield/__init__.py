"""Key-controlled steganographic neural fields.

One set of hash-grid feature tables and decoder weights represents a public
cover scene under the default hash key and a hidden scene under a secret
prime-tuple key. Swapping the key re-routes the table lookups; the
parameters, the architecture and the checkpoint bytes stay identical.
"""

from .errors import DataError, NumericsError, StegoFieldError
from .field import (MODE_IMAGE2D, MODE_RADIANCE3D, StegoField, encode_direction,
                    field_query_2d, field_query_3d, new_field)
from .hashgrid import (HashGridConfig, encode, encode_backward, hash_index,
                       init_tables, level_resolution)
from .keys import (KeySet, PrimeKey, assigned_key, default_key, default_key_set,
                   generate_key, generate_key_set, is_probable_prime,
                   load_key_set, save_key_set)
from .metrics import psnr, ssim
from .mlp import (AdamState, MlpParams, MlpSpec, adam_step, init_mlp,
                  mlp_backward, mlp_forward, mse_loss, sparsity_loss)
from .render import (Camera, Ray, composite, generate_ray, generate_rays,
                     render_image, sample_along_ray)
from .scene_io import (SceneDataset, load_blender_dataset, load_checkpoint,
                       load_image_2d, load_image_pair, load_png,
                       save_checkpoint, save_png)
from .security import (available_primes, brute_force_years, fill_rate,
                       key_space, partial_key_attack)
from .train import (TrainConfig, TrainScene, Trainer, build_roster,
                    make_mixed_keyset, render_image_2d, train, train_step)

__version__ = "0.1.0"
