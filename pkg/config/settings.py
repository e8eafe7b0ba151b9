"""
Django settings for the tat_lab project.

The project has no web surface: Django provides the settings layer, the
logging configuration, the management-command CLI (``manage.py forward``,
``reconstruct``, ``visibility``, ``selftest``, ``sweep``) and the test runner.

Values are read from the environment (optionally from a ``.env`` file).
"""

from pathlib import Path
import os
from dotenv import load_dotenv

load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv('SECRET_KEY', 'tat-lab-local')

DEBUG = os.getenv('DEBUG', '0') == '1'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'tat_field',
    'tat_wave',
    'tat_detector',
    'tat_recon',
    'tat_rays',
    'tat_experiments',
]

# No database: experiments persist through array files and sidecars.
DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Experiment defaults

TAT_OUTPUT_DIR = Path(os.getenv('TAT_OUTPUT_DIR', BASE_DIR / 'runs'))

TAT_THREADS = int(os.getenv('TAT_THREADS', '1'))

TAT_DEFAULT_SEED = int(os.getenv('TAT_DEFAULT_SEED', '0'))

# tqdm bars on long time loops and solver iterations
TAT_PROGRESS = os.getenv('TAT_PROGRESS', '0') == '1'

TAT_CFL_SAFETY = float(os.getenv('TAT_CFL_SAFETY', '0.5'))

TAT_PML_WIDTH = float(os.getenv('TAT_PML_WIDTH', '0.5'))

TAT_PML_ORDER = int(os.getenv('TAT_PML_ORDER', '2'))

TAT_NAN_GUARD_INTERVAL = int(os.getenv('TAT_NAN_GUARD_INTERVAL', '100'))

TAT_LOG_LEVEL = os.getenv('TAT_LOG_LEVEL', 'INFO')

TAT_LOG_FILE = os.getenv('TAT_LOG_FILE', os.path.join(BASE_DIR, 'tat_lab.log'))


# 로깅 설정
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
        'console': {
            'format': '[{asctime}] {levelname} {name}: {message}',
            'style': '{',
            'datefmt': '%Y-%m-%d %H:%M:%S',
        },
    },
    'handlers': {
        'console': {
            'level': 'DEBUG',
            'class': 'logging.StreamHandler',
            'formatter': 'console',
        },
        'file': {
            'level': 'INFO',
            'class': 'logging.FileHandler',
            'filename': TAT_LOG_FILE,
            'formatter': 'verbose',
            'delay': True,
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
        'tat_field': {
            'handlers': ['console', 'file'],
            'level': TAT_LOG_LEVEL,
            'propagate': False,
        },
        'tat_wave': {
            'handlers': ['console', 'file'],
            'level': TAT_LOG_LEVEL,
            'propagate': False,
        },
        'tat_detector': {
            'handlers': ['console', 'file'],
            'level': TAT_LOG_LEVEL,
            'propagate': False,
        },
        'tat_recon': {
            'handlers': ['console', 'file'],
            'level': TAT_LOG_LEVEL,
            'propagate': False,
        },
        'tat_rays': {
            'handlers': ['console', 'file'],
            'level': TAT_LOG_LEVEL,
            'propagate': False,
        },
        'tat_experiments': {
            'handlers': ['console', 'file'],
            'level': TAT_LOG_LEVEL,
            'propagate': False,
        },
    },
}
