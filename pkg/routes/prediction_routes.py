from flask import Blueprint, jsonify, request

from routes.model_routes import get_service, no_model

prediction_bp = Blueprint('prediction', __name__, url_prefix='/api')


def read_body():
    data = request.get_json(silent=True)
    if not isinstance(data, dict):
        return None, (jsonify({'success': False, 'message': 'Request body must be a JSON object'}), 400)
    if not data.get('events'):
        return None, (jsonify({'success': False, 'message': 'Missing required field: events'}), 400)
    return data, None


@prediction_bp.route('/predict', methods=['POST'])
def predict():
    """Next event after the posted history"""
    service = get_service()
    if service is None:
        return no_model()
    data, error = read_body()
    if error:
        return error

    sequence = service.sequence_from_payload(data)
    prediction = service.predict_next(sequence, data.get('route'))
    return jsonify({
        'success': True,
        'prediction': prediction
    }), 200


@prediction_bp.route('/score', methods=['POST'])
def score():
    """Log-likelihood of the posted sequence"""
    service = get_service()
    if service is None:
        return no_model()
    data, error = read_body()
    if error:
        return error

    sequence = service.sequence_from_payload(data)
    metrics = service.score([sequence], data.get('route'))
    return jsonify({
        'success': True,
        'score': metrics
    }), 200
