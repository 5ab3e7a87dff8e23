"""
Django settings for hoi_system project.

The project has no web surface: Django provides configuration, the run ledger
(ORM), the management-command CLI and the test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = config('SECRET_KEY', default='django-insecure-hoi-system-local-only')

DEBUG = config('DEBUG', default=True, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'rest_framework',
    'interaction',
]

MIDDLEWARE = []


# Database (run ledger only; files under HOI_OUTPUT_DIR are the source of truth)
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': config('DB_ENGINE', default='django.db.backends.sqlite3'),
        'NAME': config('DB_NAME', default=str(BASE_DIR / 'hoi_runs.sqlite3')),
    }
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = config('TIME_ZONE', default='UTC')

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Interaction pipeline

HOI_OUTPUT_DIR = Path(config('HOI_OUTPUT_DIR', default=str(BASE_DIR / 'runs')))
HOI_DEFAULT_SEED = config('HOI_DEFAULT_SEED', default=0, cast=int)
HOI_TORCH_THREADS = config('HOI_TORCH_THREADS', default=1, cast=int)
HOI_LOG_LEVEL = config('HOI_LOG_LEVEL', default='INFO')


# Logging Configuration
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'filters': {
        'require_debug_false': {
            '()': 'django.utils.log.RequireDebugFalse',
        },
    },
    'handlers': {
        'console': {
            'level': 'DEBUG',
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
        'production_console': {
            'level': 'WARNING',  # Only warnings and errors in production
            'filters': ['require_debug_false'],
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
        'django.db.backends': {
            'handlers': ['console'],
            'level': 'WARNING',  # Don't log SQL queries
            'propagate': False,
        },
        'matplotlib': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': False,
        },
        'interaction': {
            'handlers': ['console', 'production_console'],
            'level': HOI_LOG_LEVEL,
            'propagate': False,
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
}
