import os
import yaml

from errors import ConfigError

DEFAULT_SETTINGS_FILE = 'eforecast.yaml'
ENV_PREFIX = 'EFORECAST_'

# Keys that may hold a list of values in simulate mode.
GRID_KEYS = ('mu', 'theta', 'T', 'lag', 'alpha', 'k', 'methods')

SETTING_KEYS = (
    'mode', 'rule', 'lag', 'alternative', 'xi', 'k', 'alpha', 'condition_column',
    'condition_threshold', 'stopping', 'all_scores', 'baselines', 'bandwidth',
    'input', 'output', 'seed', 'replications', 'design', 'preset', 'mu', 'theta',
    'T', 'methods', 'jobs',
)


def canonical_key(key):
    key = str(key).strip().replace('-', '_')
    return key if key == 'T' else key.lower()


def _read_file(path):
    try:
        with open(path, 'r') as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Settings file {path} is not valid YAML: {e}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Settings file {path} must contain 'key: value' lines.")
    return {canonical_key(k): v for k, v in data.items()}


def fold_alternative(layer, mode=None):
    """
    Rewrites the `xi` and (in evaluate mode) `k` shorthands of one settings
    layer into its `alternative` key. Folding each layer on its own lets a
    later layer's alternative replace an earlier layer's shorthand.
    """
    layer = dict(layer)
    mode = mode or layer.get('mode') or 'evaluate'
    shorthand = []
    xi = layer.pop('xi', None)
    if xi is not None:
        shorthand.append(('xi', f"xi:{xi}"))
    if mode == 'evaluate' and layer.get('k') is not None:
        k = layer.pop('k')
        if isinstance(k, (list, tuple)):
            if len(k) != 1:
                raise ConfigError("Evaluate mode takes a single value for 'k'.")
            k = k[0]
        shorthand.append(('k', f"k:{k}"))
    if len(shorthand) > 1:
        raise ConfigError("Give either 'xi' or 'k', not both.")
    if shorthand:
        key, alternative = shorthand[0]
        if layer.get('alternative') is not None:
            raise ConfigError(f"Give either 'alternative' or '{key}', not both.")
        layer['alternative'] = alternative
    return layer


def load_settings(path=None, environ=None, mode=None):
    """
    Loads run settings from a flat YAML file, then lets EFORECAST_<KEY>
    environment variables override it. Without an explicit path the default
    file is read only if it exists. Command-line flags are merged by the caller.
    """
    environ = os.environ if environ is None else environ
    file_layer = {}
    settings_path = path or DEFAULT_SETTINGS_FILE
    if os.path.exists(settings_path):
        print(f"--- Loading run settings from {settings_path} ---")
        file_layer = _read_file(settings_path)
    elif path:
        raise ConfigError(f"Settings file not found: {path}")

    env_layer = {}
    for key in SETTING_KEYS:
        raw = environ.get(ENV_PREFIX + key.upper())
        if raw is None:
            continue
        try:
            env_layer[key] = yaml.safe_load(raw)
        except yaml.YAMLError:
            env_layer[key] = raw

    mode = mode or env_layer.get('mode') or file_layer.get('mode')
    settings = fold_alternative(file_layer, mode)
    settings.update(fold_alternative(env_layer, mode))
    return settings
