from flask import Blueprint, current_app, jsonify

from config import ABLATIONS, ablation_flags

model_bp = Blueprint('model', __name__, url_prefix='/api/model')


def get_service():
    """The loaded PredictionService, or None"""
    return current_app.extensions.get('taltpp')


def no_model():
    return jsonify({'success': False, 'message': 'No checkpoint loaded'}), 503


@model_bp.route('', methods=['GET'])
def get_model():
    """Summary of the served checkpoint"""
    service = get_service()
    if service is None:
        return no_model()
    return jsonify({
        'success': True,
        'model': service.summary()
    }), 200


@model_bp.route('/ablations', methods=['GET'])
def get_ablations():
    rows = [
        {'row': name, 'flags': ablation_flags(overrides), 'overrides': overrides}
        for name, overrides in ABLATIONS.items()
    ]
    return jsonify({
        'success': True,
        'ablations': rows
    }), 200
