import logging
import os
import sys

# Add the project root to the path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app import create_app  # noqa: E402

logger = logging.getLogger(__name__)

app = create_app(os.getenv('FLASK_ENV', 'production'))
logger.info('WSGI app created (model loaded: %s)', app.extensions['taltpp'] is not None)

if __name__ == '__main__':
    app.run()
