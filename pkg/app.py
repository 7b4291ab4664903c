import logging
import os

from flask import Flask, jsonify
from flask_cors import CORS
from werkzeug.exceptions import HTTPException

from config import config, configure_logging
from exceptions import TalTppError
from predictor import PredictionService

# Import routes
from routes.model_routes import model_bp
from routes.prediction_routes import prediction_bp

logger = logging.getLogger(__name__)

HTTP_MESSAGES = {
    404: 'Endpoint not found',
    405: 'Method not allowed',
}


def create_app(config_name='development', checkpoint=None, service=None):
    """Application factory"""
    app = Flask(__name__)

    # Load configuration
    app.config.from_object(config[config_name])
    app.json.sort_keys = app.config['JSON_SORT_KEYS']
    configure_logging(app.config['LOG_LEVEL'])

    CORS(app, resources={r"/api/*": {"origins": app.config['CORS_ORIGINS']}})

    # Load the model; routes answer 503 until one is available
    checkpoint = checkpoint or app.config.get('CHECKPOINT')
    if service is None and checkpoint:
        try:
            service = PredictionService.load(checkpoint)
        except TalTppError as e:
            logger.warning('checkpoint %s not loaded: %s', checkpoint, e)
    app.extensions['taltpp'] = service

    # Register blueprints
    app.register_blueprint(model_bp)
    app.register_blueprint(prediction_bp)

    @app.route('/', methods=['GET'])
    def root():
        return jsonify({
            'success': True,
            'message': 'TAL-TPP event prediction API',
            'version': '1.0.0'
        }), 200

    # Health check endpoint
    @app.route('/api/health', methods=['GET'])
    def health_check():
        return jsonify({
            'success': True,
            'message': 'Model loaded' if app.extensions['taltpp'] else 'No checkpoint loaded',
            'status': 'healthy'
        }), 200

    # Error handlers
    @app.errorhandler(TalTppError)
    def invalid_request(error):
        return jsonify({
            'success': False,
            'message': str(error)
        }), 400

    @app.errorhandler(HTTPException)
    def http_error(error):
        return jsonify({
            'success': False,
            'message': HTTP_MESSAGES.get(error.code, error.name)
        }), error.code

    @app.errorhandler(500)
    def internal_error(error):
        return jsonify({
            'success': False,
            'message': 'Internal server error'
        }), 500

    return app


if __name__ == '__main__':
    app = create_app(os.getenv('FLASK_ENV', 'development'))
    app.run(debug=True, host='0.0.0.0', port=5000)
